#include <cstdio>

#include "dpsolve/verify.hpp"

int main() {
  dpsolve::VerifyOptions opts;
  opts.level = dpsolve::VerifyLevel::kFull;
  opts.on_result = [](const dpsolve::CriterionResult& r) {
    std::printf("%s\n", dpsolve::format_result(r).c_str());
    std::fflush(stdout);
  };
  bool ok = true;
  for (const auto& r : dpsolve::run_verification(opts)) ok = ok && r.pass;
  return ok ? 0 : 1;
}
