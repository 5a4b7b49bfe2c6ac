#pragma once

#include <string>
#include <utility>
#include <vector>

#include "homlab/config.hpp"
#include "homlab/model.hpp"

namespace homlab::cli {

struct RunOptions {
    std::string stage = "all";  // all | check | table | solve | hjb | report
    int workers_override = 0;
    long long seed_override = -1;
    std::string output_override;
    std::string config_path;  // recorded in the manifest
    bool quiet = false;
};

struct GapEntry {
    double eps = 0.0;
    double sup_gap = 0.0;
    long clamped_feet = 0;
};

struct ConvergenceReport {
    std::vector<GapEntry> gaps;  // one entry per configured epsilon
    double hjb_vs_homogenized = 0.0;
    double max_seed_rel_diff = 0.0;
    std::vector<std::string> seed_lines;
    model::AssumptionReport assumptions;
    std::vector<std::pair<std::string, double>> timings;  // stage, seconds
};

// Runs the requested stage (or the whole chain) against the artifacts in the
// config's output directory. Stages communicate only through files, so any
// stage can be rerun independently; missing upstream artifacts raise
// MissingArtifactError.
ConvergenceReport run_pipeline(const ExperimentConfig& cfg, const RunOptions& opt);

// Artifact naming shared with the CLI and tests.
std::string table_artifact(const std::string& dir, std::uint64_t seed);
std::string fine_artifact(const std::string& dir, double eps);
std::string homogenized_artifact(const std::string& dir);
std::string hjb_artifact(const std::string& dir);

}  // namespace homlab::cli
