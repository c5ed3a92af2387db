#include <cstdlib>
#include <fstream>
#include <iostream>

#include "didsnmm/acceptance.hpp"
#include "didsnmm/parallel.hpp"

// Prints one PASS/FAIL/SKIP line per acceptance criterion.
// Usage: acceptance [--quick] [--only 3,5] [--seed S] [--json out.json]
int main(int argc, char** argv) {
  didsnmm::AcceptanceOptions opt;
  std::string json_path;
  for (int a = 1; a < argc; ++a) {
    const std::string s = argv[a];
    if (s == "--quick") {
      opt.profile = "quick";
    } else if (s == "--only" && a + 1 < argc) {
      std::string list = argv[++a];
      size_t pos = 0;
      while (pos < list.size()) {
        const size_t c = list.find(',', pos);
        opt.only.push_back(std::stoi(list.substr(pos, c - pos)));
        if (c == std::string::npos) break;
        pos = c + 1;
      }
    } else if (s == "--seed" && a + 1 < argc) {
      opt.seed = std::stoull(argv[++a]);
    } else if (s == "--json" && a + 1 < argc) {
      json_path = argv[++a];
    } else if (s == "--threads" && a + 1 < argc) {
      didsnmm::set_thread_count(std::stoi(argv[++a]));
    } else {
      std::cerr << "unknown argument " << s << "\n";
      return 2;
    }
  }
  opt.on_result = [](const didsnmm::CriterionResult& r) { std::cout << didsnmm::format_result(r) << std::endl; };
  const auto results = didsnmm::run_acceptance(opt);
  int failed = 0;
  didsnmm::json all = didsnmm::json::array();
  for (auto& r : results) {
    failed += r.status == "FAIL";
    all.push_back({{"id", r.id}, {"name", r.name}, {"status", r.status}, {"detail", r.detail}, {"seconds", r.seconds},
                   {"data", r.data}});
  }
  if (!json_path.empty()) std::ofstream(json_path) << all.dump(2) << "\n";
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed or skipped") << std::endl;
  return failed ? 5 : 0;
}
