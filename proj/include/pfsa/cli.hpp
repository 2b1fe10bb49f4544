#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "pfsa/cam.hpp"
#include "pfsa/config.hpp"

namespace pfsa::cli {

/// Parses arguments and dispatches to one subcommand. Errors are printed to `err`; the return
/// value is the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

int cmd_gen(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);
int cmd_eval(const RunConfig& config, std::ostream& out);

struct CamRequest {
  std::filesystem::path image;
  std::size_t stage = 1;  // 1-based stage carrying a deep-supervision head
  std::size_t class_id = 0;
  CamSource mode = CamSource::gap;
};
int cmd_cam(const RunConfig& config, const CamRequest& request, std::ostream& out);

/// Exit code 0 iff every layer is under its threshold.
int cmd_gradcheck(const RunConfig& config, const std::string& inject_fault, std::ostream& out, std::ostream& err);

}  // namespace pfsa::cli
