#pragma once

#include <string>
#include <vector>

#include "xmodal/evalharness.hpp"
#include "xmodal/runconfig.hpp"

namespace xmodal {

// Output file names used by the pipeline commands.
constexpr const char* kCptCheckpointFile = "cpt_checkpoint.bin";
constexpr const char* kCptMetricsFile = "cpt_metrics.jsonl";
constexpr const char* kClCheckpointFile = "cl_checkpoint.bin";
constexpr const char* kClMetricsFile = "cl_metrics.jsonl";
constexpr const char* kResultsFile = "results.jsonl";

// Generates the synthetic corpus under out_dir.
GeneratedCorpus cmd_gen_data(const RunConfig& cfg, const std::string& out_dir);

// Stage 1: modality-aware pre-training over the flattened corpus in data_dir.
// Writes cpt_checkpoint.bin and cpt_metrics.jsonl to out_dir.
void cmd_cpt(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir);

// Stage 2: contrastive fine-tuning. init_checkpoint may be empty (random
// initialization) or a stage-1 checkpoint. Writes cl_checkpoint.bin and
// cl_metrics.jsonl to out_dir.
void cmd_finetune(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                  const std::string& init_checkpoint = "");

// Ranks and scores every task file with the checkpointed model. mode_override
// is "", "bidirectional" or "causal". Writes results.jsonl plus one
// *_detail.jsonl per task to out_dir and returns the per-task results.
std::vector<TaskResult> cmd_eval(const std::string& checkpoint_path,
                                 const std::vector<std::string>& task_files,
                                 const std::string& out_dir,
                                 const std::string& mode_override = "");

// Embeds each {"id", "seq"} line of input_path; writes {"id", "embedding"}
// lines. Invalid lines are reported and skipped; returns their count.
int cmd_embed(const std::string& checkpoint_path, const std::string& input_path,
              const std::string& mode_string, const std::string& out_path);

}  // namespace xmodal
