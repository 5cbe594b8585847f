// Library walk-through on synthetic data: generate a rotated copy of a
// Gaussian space, fit the map on 70% of the pairs, retrieve the rest.
//
//   align_synthetic [n] [dim] [noise] [seed]

#include <cstdlib>
#include <iostream>
#include <vector>

#include "xalign/xalign.hpp"

int main(int argc, char** argv) {
  using namespace xalign;
  SynthConfig config;
  config.n = argc > 1 ? std::atoll(argv[1]) : 2000;
  config.d_source = config.d_target = argc > 2 ? std::atoll(argv[2]) : 64;
  config.noise_sigma = argc > 3 ? std::atof(argv[3]) : 0.1;
  config.seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 7;

  try {
    const auto spaces = gen_paired_spaces(config);
    const auto cut = spaces.pairs.begin() + static_cast<std::ptrdiff_t>(spaces.pairs.size() * 7 / 10);
    const std::vector<LabelPair> train(spaces.pairs.begin(), cut);
    const std::vector<LabelPair> test(cut, spaces.pairs.end());

    const auto model = fit_alignment(spaces.source, spaces.target, train, Preprocessing::unit_l2);
    std::cout << "orthogonality error " << model.map.orthogonality_error() << '\n';
    if (spaces.rotation) {
      std::cout << "|omega - Q|_F " << (model.map.omega - spaces.rotation->omega).norm() << '\n';
    }

    for (Metric metric : {Metric::cosine, Metric::csls}) {
      EvalOptions opts;
      opts.metric = metric;
      const auto result = evaluate(model, spaces.source, spaces.target, std::nullopt, test, opts);
      std::cout << to_string(metric);
      for (std::size_t i = 0; i < result.ks.size(); ++i) {
        std::cout << "  P@" << result.ks[i] << " " << format_number(result.precision[i]);
      }
      std::cout << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  }
  return 0;
}
