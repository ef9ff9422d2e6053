#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ubu/experiments.hpp"

namespace ubu {

/// Flat `key = value` file; `#` starts a comment. Duplicate keys are an error.
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Turns merged key/value settings into a config, reporting every bad or
/// unknown key in one ValidationError.
ExperimentConfig config_from_settings(const std::string& kind,
                                      const std::map<std::string, std::string>& settings);

/// Parses a tensor spec: `diag:1,2,3`, `random:<d>:<seed>` or a file path.
Tensor3 parse_tensor_spec(const std::string& spec);

/// Runs one command line. argv[0] is the program name. Returns 0 on
/// success, 1 on usage or validation errors, 2 on numerical failures.
int parse_and_dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);
int parse_and_dispatch(int argc, const char* const* argv);

}  // namespace ubu
