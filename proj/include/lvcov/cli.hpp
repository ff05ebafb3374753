#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "lvcov/network.hpp"
#include "lvcov/phantom.hpp"

namespace lvcov {

inline constexpr const char* kToolkitVersion = "0.4.0";

enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 1,
  exit_data = 2,
  exit_check = 3,
};

using ConfigMap = std::map<std::string, std::string>;

/// Each entry is either key=value or the path of a file of key=value lines
/// ('#' starts a comment). Later entries override earlier ones.
ConfigMap parse_config_entries(const std::vector<std::string>& entries);

/// Unknown keys and unparsable values raise ParameterError.
TrainConfig apply_train_config(TrainConfig base, const ConfigMap& config);

/// Triplets and polarities of every volume in a full-coverage cohort, with
/// the four rotation/scale variants appended per sample when `augmented`.
struct TrainingSet {
  std::vector<Tensor> blocks;
  std::vector<int> labels;
};
TrainingSet build_training_set(const std::string& cohort_dir, Task task, bool augmented);
void append_training_samples(TrainingSet& set, const VolumeStack& volume, Task task, bool augmented);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lvcov
