#pragma once

#include <string>
#include <utility>
#include <vector>

#include "homlab/cell.hpp"
#include "homlab/env.hpp"
#include "homlab/model.hpp"
#include "homlab/solve.hpp"
#include "homlab/xform.hpp"

namespace homlab::io {

// All tabular artifacts share one format: line 1 is a JSON metadata object,
// line 2 the column names, then the rows. Doubles are written in shortest
// round-trip form, so save/load is exact and reruns are byte-comparable.

void save_table(const cell::EffectiveLagrangianTable& t, const std::string& path);
cell::EffectiveLagrangianTable load_table(const std::string& path);

void save_value_field(const solve::ValueField& v, const std::string& path);
solve::ValueField load_value_field(const std::string& path);

void save_control(const solve::StepControl& u, int dim, const std::string& path);
std::pair<solve::StepControl, int> load_control(const std::string& path);

void save_field_dump(const env::EnvironmentHandle& h, const std::vector<env::FieldSample>& s,
                     const std::string& path);

void save_hamiltonian_table(const xform::HamiltonianTable& t, const std::string& path);

// (x..., u..., f...) samples on a regular lattice -> interpolated dynamics.
model::UserDynamicsTable load_user_dynamics_csv(const std::string& path, int dim);

std::string format_double(double v);  // shortest round-trip decimal
std::string file_hash_hex(const std::string& path);  // fnv-1a over bytes

struct ManifestEntry {
    std::string path;  // relative to the manifest directory
    std::string hash;
};

void write_manifest(const std::string& dir, const std::vector<ManifestEntry>& inputs,
                    const std::vector<ManifestEntry>& outputs,
                    const std::vector<std::pair<std::string, std::string>>& notes);

}  // namespace homlab::io
