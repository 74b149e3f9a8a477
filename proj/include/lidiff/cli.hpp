#pragma once

#include <string>
#include <vector>

#include "lidiff/config.hpp"
#include "lidiff/data.hpp"

namespace lidiff {

// Entry point behind the lidiff binary; exposed so tests can drive the CLI
// in-process. Returns 0 on success, 2 on usage errors, 1 on runtime errors.
int cli_main(const std::vector<std::string>& args);

// Dataset selection shared by the subcommands. Toy datasets derive distinct
// train/eval splits from the recipe seed; cifar10 treats the last data_path
// entry as the evaluation batch file.
Dataset load_dataset_split(const RunConfig& rc, bool eval_split);

}  // namespace lidiff
