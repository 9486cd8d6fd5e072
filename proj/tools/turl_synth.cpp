// Writes the synthetic demo corpus (corpus.jsonl plus side files) into a directory.
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "turl/synth.hpp"

int main(int argc, char** argv) {
  turl::synth::SynthConfig cfg;
  std::string out;
  CLI::App app{"Generate a synthetic relational web-table corpus", "turl_synth"};
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--seed", cfg.seed, "Generator seed");
  app.add_option("--tables", cfg.tables, "Number of tables");
  app.add_option("--domains", cfg.domains, "Number of domains");
  app.add_option("--subjects", cfg.subjects_per_domain, "Subjects per domain");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    std::filesystem::create_directories(out);
    const auto kb = turl::synth::build_kb(cfg);
    const auto tables = turl::synth::generate_tables(kb, cfg);
    turl::synth::write_corpus(kb, tables, out);
    std::cout << "wrote " << tables.size() << " tables and " << kb.entities.size() << " KB entities to " << out
              << "\n";
  } catch (const std::exception& e) {
    std::cerr << "turl_synth: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
