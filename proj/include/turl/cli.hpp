#pragma once

#include <atomic>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace turl::cli {

/// Process state handed in by the executable; the library never reads it itself.
struct Environment {
  std::optional<std::string> seed;          // TURL_SEED
  const std::atomic<bool>* stop = nullptr;  // set by a SIGINT handler
};

/// Subcommands: preprocess, pretrain, finetune, evaluate, ablate.
/// Exit codes: 0 ok, 1 runtime failure (or interrupted), 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Environment& env = {});

}  // namespace turl::cli
