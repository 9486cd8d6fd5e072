#include <atomic>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "turl/cli.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_sigint(int) { g_stop.store(true); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_sigint);
  turl::cli::Environment env;
  if (const char* s = std::getenv("TURL_SEED")) env.seed = s;
  env.stop = &g_stop;
  return turl::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr, env);
}
