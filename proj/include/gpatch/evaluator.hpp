#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gpatch/dataset.hpp"
#include "gpatch/deployer.hpp"
#include "gpatch/generator.hpp"
#include "gpatch/victims.hpp"

namespace gpatch {

// Images the victim classifies correctly, none of them of the target class.
struct EvalSet {
  std::vector<Sample> items;
  std::size_t target_class = 0;
  std::size_t num_classes = 0;
  std::string provenance;

  std::size_t size() const { return items.size(); }
};

// Throws ContractError when no image survives the filter.
EvalSet build_eval_set(const VictimModel& victim, const Dataset& dataset,
                       std::size_t target_class, std::size_t max_images);

// One report row. asr == Q / P.
struct EvalRow {
  std::string victim;
  std::string patch_id;
  std::size_t patch_height = 0;
  std::size_t patch_width = 0;
  std::string condition = "clean";
  std::size_t p = 0;
  std::size_t q = 0;
  double asr = 0.0;
  std::uint64_t seed = 0;
  std::string timestamp;
};

// Rewrites the patch for one trial (image index, trial index); used by the
// robustness protocols to apply colour shifts or per-trial noise.
using PatchTransform = std::function<Patch(const Patch& patch, std::size_t image, std::size_t trial)>;

struct AttackOptions {
  std::size_t placements_per_image = 1;
  std::uint64_t seed = 0;
  std::string patch_id;
  std::string condition = "clean";
  PatchTransform transform;
};

// Per-trial success flags in (image, trial) order. Placement randomness comes
// from per-image streams, so the result does not depend on the thread count.
std::vector<std::uint8_t> attack_outcomes(const VictimModel& victim, const Patch& patch,
                                          const EvalSet& eval_set, std::size_t target_class,
                                          const AttackOptions& options);

EvalRow attack_success_rate(const VictimModel& victim, const Patch& patch, const EvalSet& eval_set,
                            std::size_t target_class, const AttackOptions& options);

// ISO-8601 UTC. Honours SOURCE_DATE_EPOCH so reruns can be byte-identical.
std::string report_timestamp();

enum class Grouping {
  flat,          // one line per row
  by_size,       // victims down, patch sizes across
  by_condition,  // victims down, conditions across
};

struct RenderedReport {
  std::string table;  // human readable
  std::string jsonl;  // one JSON object per row
};

// Rows are sorted canonically (victim, size, condition, then the remaining
// fields), so any permutation of the input renders to the same bytes.
RenderedReport table_report(std::vector<EvalRow> rows, Grouping grouping);

std::string row_to_json(const EvalRow& row);
EvalRow row_from_json(const std::string& line);

// Appends rows to a line-delimited report file; earlier lines are untouched.
void append_rows(const std::string& path, std::span<const EvalRow> rows);
std::vector<EvalRow> read_rows(const std::string& path);

}  // namespace gpatch
