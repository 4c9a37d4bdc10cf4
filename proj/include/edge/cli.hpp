#pragma once

// Command implementations behind the `edge` executable. Each command returns
// an exit status: 0 success, 1 validation failure, 2 runtime failure.

#include <iosfwd>
#include <string>
#include <vector>

#include "edge/config.hpp"

namespace edge {

int cmd_generate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err);
// An empty `checkpoint` means <out>/ckpt/best; a nonempty `compare` adds
// Welch t-tests against that checkpoint on the same episodes.
int cmd_evaluate(const RunConfig& config, const std::string& checkpoint, const std::string& compare,
                 std::ostream& out, std::ostream& err);
// Empty `variants` runs the full model plus the four single-removal variants.
int cmd_ablate(const RunConfig& config, const std::vector<std::string>& variants, std::ostream& out,
               std::ostream& err);
int cmd_export_embeddings(const RunConfig& config, const std::string& checkpoint, std::ostream& out,
                          std::ostream& err);

// Parses arguments, resolves the configuration and dispatches.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace edge
