#pragma once

// Command implementations behind the CLI. Each throws on failure; main()
// maps exception types to the documented exit codes (0 ok, 2 usage/refusal,
// 3 numeric divergence, 4 incompatibility).

#include "mirgan/config.hpp"

#include <string>
#include <vector>

namespace mirgan {

struct EvalArgs {
  std::string checkpoint;
  std::string corpus_dir;   // empty: use the checkpoint's paths.corpus_dir
  std::string out_dir;      // empty: next to the checkpoint
  std::string modality = "AV";
  std::string split = "val";  // val | train | all
  std::vector<double> snr_levels;  // empty: clean-only report
};

void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, bool force);
void cmd_train(RunConfig cfg, const std::string& corpus_dir, const std::string& out_dir,
               const std::string& resume_checkpoint, bool force);
void cmd_eval(const EvalArgs& args);
void cmd_gradcheck(const std::string& scope);
void cmd_diagnose(const std::string& checkpoint, const std::string& corpus_dir,
                  const std::string& out_dir, bool force);
void cmd_ablate(RunConfig cfg, const std::string& corpus_dir, const std::string& out_dir,
                int n_seeds, bool force);

// Exit-code mapping for main(): usage/refusal 2, numeric divergence 3,
// incompatibility (dims, formats, checkpoints) 4.
int exit_code_for(const std::exception& e);

}  // namespace mirgan
