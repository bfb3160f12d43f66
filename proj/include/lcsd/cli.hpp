#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "lcsd/trainer.hpp"

namespace lcsd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Runs one subcommand. `args` excludes the program name. Errors go to `err`
// as a single line: "error: <usage|runtime>: <message>".
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// key=value lines; '#' starts a comment. Unknown keys are rejected with the
// line number.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

// defaults < file < flags
TrainConfig resolve_config(const std::map<std::string, std::string>& file_values,
                           const std::map<std::string, std::string>& flag_values);

// Sorted key=value text.
std::string resolved_text(const std::map<std::string, std::string>& kv);

}  // namespace lcsd::cli
