// Fits the same two-component sample with and without its second column and
// prints the standard error of the first mean and the allocation rate.
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "mixturelab/mixturelab.hpp"

using namespace mixturelab;

int main(int argc, char** argv) {
  const double d2 = argc > 1 ? std::atof(argv[1]) : 3.0;
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 1;

  SimSetting setting = SimSetting::desk(SettingKind::kS2);
  const SimCell cell{"", "d2", d2, 0.0};
  const Sample both = generate(setting, cell, seed);
  const Sample first = select_columns(both, {0});

  std::printf("n=%d, d2=%g, seed=%llu\n", both.n(), d2, static_cast<unsigned long long>(seed));
  std::printf("%-10s %10s %10s %10s %8s %6s\n", "analysis", "mu11", "se(I1)", "se(I2)", "AR", "roots");
  for (const Sample* s : {&first, &both}) {
    const MixtureModel truth = s->dim() == 1 ? marginalize(true_model(setting, cell), {0})
                                             : true_model(setting, cell);
    const FitConfig config = study_fit_config(setting, cell, s->dim());
    const MultiStartReport search = multi_start_search(*s, config);
    const FitResult* best = nullptr;
    for (const FitResult& r : search.roots)
      if (!r.spurious.spurious) {
        best = &r;
        break;
      }
    if (!best) {
      std::printf("%-10s no regular root\n", s->dim() == 1 ? "univariate" : "bivariate");
      continue;
    }
    const FitResult fit = align_labels(*best, truth);
    const InfoReport info = information_report(fit, *s);
    const int idx = info.layout.mean_index(0, 0);
    auto se = [&](int e) {
      const auto& v = info.estimator(e).se;
      return v ? (*v)[idx] : std::nan("");
    };
    std::printf("%-10s %10.4f %10.4f %10.4f %8.4f %6zu\n", s->dim() == 1 ? "univariate" : "bivariate",
                fit.model.mean(0)[0], se(1), se(2), allocation_rate(fit, *s).overall,
                search.roots.size());
  }
}
