// hyperx_oracle: scores a raw synthetic dataset with the phase-difference
// oracle and prints the per-target accuracy. Exit 3 if below --min-accuracy.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "hyperx/commands.hpp"
#include "phase_oracle.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Phase-oracle classifier for synthetic hyperx datasets"};
  std::string data;
  double min_accuracy = 0.0;
  app.add_option("--data", data, "Raw synthetic dataset directory")->required();
  app.add_option("--min-accuracy", min_accuracy, "Fail below this accuracy on either target");
  CLI11_PARSE(app, argc, argv);

  return hyperx::cli::run_guarded(
      [&] {
        const hyperx::Dataset d = hyperx::load_dataset(data);
        if (d.stage != hyperx::Stage::raw) throw hyperx::FormatError("the oracle reads raw datasets");
        if (d.synthetic.is_null()) throw hyperx::FormatError("dataset has no synthetic generator record");
        hyperx::SyntheticSpec spec;
        spec.eeg_arousal_hz = d.synthetic.at("eeg_arousal_hz").get<double>();
        spec.eeg_valence_hz = d.synthetic.at("eeg_valence_hz").get<double>();
        const auto s = hyperx::oracle::score_trials(d, spec);
        const double arousal = static_cast<double>(s.arousal_correct) / static_cast<double>(s.total);
        const double valence = static_cast<double>(s.valence_correct) / static_cast<double>(s.total);
        std::printf("oracle on %zu trials: arousal %.2f%%, valence %.2f%%\n", s.total, 100.0 * arousal,
                    100.0 * valence);
        return std::min(arousal, valence) >= min_accuracy ? hyperx::cli::kOk : hyperx::cli::kCheckFailed;
      },
      std::cerr);
}
