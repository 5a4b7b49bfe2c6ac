#include "homlab/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "homlab/errors.hpp"
#include "homlab/rng.hpp"

namespace homlab::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

namespace {

double parse_double(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto* b = s.data();
    auto [p, ec] = std::from_chars(b, b + s.size(), v);
    if (ec != std::errc{}) throw ConfigError("csv: malformed number '" + s + "'");
    (void)p;
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::ofstream open_out(const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("missing artifact: " + path);
    return f;
}

json axis_to_json(const LatticeAxis& a) {
    return json{{"lo", a.lo}, {"step", a.step}, {"n", a.n}};
}

LatticeAxis axis_from_json(const json& j) {
    LatticeAxis a;
    a.lo = j.at("lo").get<double>();
    a.step = j.at("step").get<double>();
    a.n = j.at("n").get<int>();
    return a;
}

}  // namespace

void save_table(const cell::EffectiveLagrangianTable& t, const std::string& path) {
    json head;
    head["kind"] = "effective_lagrangian_table";
    head["version"] = 1;
    head["dim"] = t.dim;
    head["model_hash"] = t.model_hash;
    head["seed"] = t.seed;
    head["b_schedule"] = t.b_schedule;
    head["axes"] = {{"t", axis_to_json(t.lattice.t)}};
    for (int a = 0; a < t.dim; ++a) {
        head["axes"]["x"].push_back(axis_to_json(t.lattice.x[static_cast<size_t>(a)]));
        head["axes"]["u"].push_back(axis_to_json(t.lattice.u[static_cast<size_t>(a)]));
    }
    head["numerics"] = {{"micro_dt", t.numerics.micro_dt},
                        {"micro_lattice", t.numerics.micro_lattice},
                        {"control_radius", t.numerics.control_radius},
                        {"control_grid_n", t.numerics.control_grid_n},
                        {"tube_radius", t.numerics.tube_radius},
                        {"richardson_fraction", t.numerics.richardson_fraction}};

    auto f = open_out(path);
    f << head.dump() << "\n";
    f << "t";
    for (int a = 0; a < t.dim; ++a) f << ",x" << a;
    for (int a = 0; a < t.dim; ++a) f << ",u" << a;
    f << ",value,error,feasible\n";
    for (int it = 0; it < t.lattice.t.n; ++it) {
        IVec ix = IVec::zero(t.dim), iu = IVec::zero(t.dim);
        for (;;) {
            const std::size_t idx = t.index(it, ix, iu);
            f << format_double(t.lattice.t.at(it));
            for (int a = 0; a < t.dim; ++a)
                f << "," << format_double(t.lattice.x[a].at(static_cast<int>(ix[a])));
            for (int a = 0; a < t.dim; ++a)
                f << "," << format_double(t.lattice.u[a].at(static_cast<int>(iu[a])));
            f << "," << format_double(t.values[idx]) << "," << format_double(t.errors[idx])
              << "," << int(t.feasible[idx]) << "\n";
            // advance (iu fastest, then ix)
            int a = t.dim - 1;
            for (; a >= 0; --a) {
                if (++iu[a] < t.lattice.u[a].n) break;
                iu[a] = 0;
            }
            if (a >= 0) continue;
            a = t.dim - 1;
            for (; a >= 0; --a) {
                if (++ix[a] < t.lattice.x[a].n) break;
                ix[a] = 0;
            }
            if (a < 0) break;
        }
    }
}

cell::EffectiveLagrangianTable load_table(const std::string& path) {
    auto f = open_in(path);
    std::string line;
    if (!std::getline(f, line)) throw ConfigError("table: empty file " + path);
    json head = json::parse(line);
    if (head.at("kind") != "effective_lagrangian_table")
        throw ConfigError("table: wrong artifact kind in " + path);

    cell::EffectiveLagrangianTable t;
    t.dim = head.at("dim").get<int>();
    t.model_hash = head.at("model_hash").get<std::string>();
    t.seed = head.at("seed").get<std::uint64_t>();
    t.b_schedule = head.at("b_schedule").get<std::vector<double>>();
    t.lattice.t = axis_from_json(head.at("axes").at("t"));
    for (int a = 0; a < t.dim; ++a) {
        t.lattice.x.push_back(axis_from_json(head.at("axes").at("x")[static_cast<size_t>(a)]));
        t.lattice.u.push_back(axis_from_json(head.at("axes").at("u")[static_cast<size_t>(a)]));
    }
    const auto& nm = head.at("numerics");
    t.numerics.micro_dt = nm.at("micro_dt").get<double>();
    t.numerics.micro_lattice = nm.at("micro_lattice").get<double>();
    t.numerics.control_radius = nm.at("control_radius").get<double>();
    t.numerics.control_grid_n = nm.at("control_grid_n").get<int>();
    t.numerics.tube_radius = nm.at("tube_radius").get<double>();
    t.numerics.richardson_fraction = nm.at("richardson_fraction").get<double>();

    t.values.assign(t.size(), 0.0);
    t.errors.assign(t.size(), 0.0);
    t.feasible.assign(t.size(), 1);

    std::getline(f, line);  // column header
    std::size_t rows = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        const std::size_t expect = 1 + 2 * static_cast<std::size_t>(t.dim) + 3;
        if (cells.size() != expect) throw ConfigError("table: bad row in " + path);
        if (rows >= t.size()) throw ConfigError("table: too many rows in " + path);
        t.values[rows] = parse_double(cells[expect - 3]);
        t.errors[rows] = parse_double(cells[expect - 2]);
        t.feasible[rows] = static_cast<std::uint8_t>(cells[expect - 1] == "1");
        ++rows;
    }
    if (rows != t.size()) throw ConfigError("table: row count mismatch in " + path);
    return t;
}

void save_value_field(const solve::ValueField& v, const std::string& path) {
    json head;
    head["kind"] = "value_field";
    head["version"] = 1;
    head["dim"] = v.dim;
    head["field"] = static_cast<int>(v.kind);
    head["eps"] = v.eps;
    head["model_hash"] = v.model_hash;
    head["clamped_feet"] = v.clamped_feet;
    head["lip_quotient"] = v.lip_quotient;
    head["lip_bound"] = v.lip_bound;
    head["grid"] = {{"t_start", v.grid.t_start}, {"t_end", v.grid.t_end},
                    {"dt", v.grid.dt},           {"dx", v.grid.dx},
                    {"control_radius", v.grid.control_radius},
                    {"control_grid_n", v.grid.control_grid_n}};
    for (int a = 0; a < v.dim; ++a) {
        head["grid"]["lo"].push_back(v.grid.space_box.lo[a]);
        head["grid"]["hi"].push_back(v.grid.space_box.hi[a]);
    }

    auto f = open_out(path);
    f << head.dump() << "\n";
    f << "t";
    for (int a = 0; a < v.dim; ++a) f << ",x" << a;
    f << ",value";
    for (int a = 0; a < v.dim; ++a) f << ",policy" << a;
    f << "\n";
    const std::size_t nodes = v.grid.nodes_per_slice();
    for (std::size_t s = 0; s < v.values.size(); ++s) {
        for (std::size_t j = 0; j < nodes; ++j) {
            const Vec x = v.grid.node(j, v.dim);
            f << format_double(v.grid.time_at(static_cast<int>(s)));
            for (int a = 0; a < v.dim; ++a) f << "," << format_double(x[a]);
            f << "," << format_double(v.values[s][j]);
            for (int a = 0; a < v.dim; ++a) f << "," << format_double(v.policy[s][j][a]);
            f << "\n";
        }
    }
}

solve::ValueField load_value_field(const std::string& path) {
    auto f = open_in(path);
    std::string line;
    if (!std::getline(f, line)) throw ConfigError("value field: empty file " + path);
    json head = json::parse(line);
    if (head.at("kind") != "value_field")
        throw ConfigError("value field: wrong artifact kind in " + path);

    solve::ValueField v;
    v.dim = head.at("dim").get<int>();
    v.kind = static_cast<solve::FieldKind>(head.at("field").get<int>());
    v.eps = head.at("eps").get<double>();
    v.model_hash = head.at("model_hash").get<std::string>();
    v.clamped_feet = head.at("clamped_feet").get<long>();
    v.lip_quotient = head.at("lip_quotient").get<double>();
    v.lip_bound = head.at("lip_bound").get<double>();
    const auto& g = head.at("grid");
    v.grid.t_start = g.at("t_start").get<double>();
    v.grid.t_end = g.at("t_end").get<double>();
    v.grid.dt = g.at("dt").get<double>();
    v.grid.dx = g.at("dx").get<double>();
    v.grid.control_radius = g.at("control_radius").get<double>();
    v.grid.control_grid_n = g.at("control_grid_n").get<int>();
    v.grid.space_box.lo = Vec::zero(v.dim);
    v.grid.space_box.hi = Vec::zero(v.dim);
    for (int a = 0; a < v.dim; ++a) {
        v.grid.space_box.lo[a] = g.at("lo")[static_cast<size_t>(a)].get<double>();
        v.grid.space_box.hi[a] = g.at("hi")[static_cast<size_t>(a)].get<double>();
    }

    const int slices = v.grid.time_slices();
    const std::size_t nodes = v.grid.nodes_per_slice();
    v.values.assign(static_cast<std::size_t>(slices), std::vector<double>(nodes, 0.0));
    v.policy.assign(static_cast<std::size_t>(slices),
                    std::vector<Vec>(nodes, Vec::zero(v.dim)));
    std::getline(f, line);  // columns
    std::size_t row = 0;
    const std::size_t total = static_cast<std::size_t>(slices) * nodes;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (row >= total) throw ConfigError("value field: too many rows in " + path);
        const auto cells = split_csv(line);
        const std::size_t s = row / nodes;
        const std::size_t j = row % nodes;
        v.values[s][j] = parse_double(cells[1 + static_cast<std::size_t>(v.dim)]);
        Vec pol = Vec::zero(v.dim);
        for (int a = 0; a < v.dim; ++a)
            pol[a] = parse_double(cells[2 + static_cast<std::size_t>(v.dim) +
                                        static_cast<std::size_t>(a)]);
        v.policy[s][j] = pol;
        ++row;
    }
    if (row != total) throw ConfigError("value field: row count mismatch in " + path);
    return v;
}

void save_control(const solve::StepControl& u, int dim, const std::string& path) {
    json head;
    head["kind"] = "step_control";
    head["version"] = 1;
    head["dim"] = dim;
    head["t_end"] = u.breakpoints.empty() ? 0.0 : u.breakpoints.back();
    auto f = open_out(path);
    f << head.dump() << "\n";
    f << "t_break";
    for (int a = 0; a < dim; ++a) f << ",u" << a;
    f << "\n";
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        f << format_double(u.breakpoints[i]);
        for (int a = 0; a < dim; ++a) f << "," << format_double(u.values[i][a]);
        f << "\n";
    }
}

std::pair<solve::StepControl, int> load_control(const std::string& path) {
    auto f = open_in(path);
    std::string line;
    if (!std::getline(f, line)) throw ConfigError("control: empty file " + path);
    json head = json::parse(line);
    if (head.at("kind") != "step_control")
        throw ConfigError("control: wrong artifact kind in " + path);
    const int dim = head.at("dim").get<int>();
    const double t_end = head.at("t_end").get<double>();
    solve::StepControl u;
    std::getline(f, line);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        u.breakpoints.push_back(parse_double(cells[0]));
        Vec val = Vec::zero(dim);
        for (int a = 0; a < dim; ++a) val[a] = parse_double(cells[1 + static_cast<size_t>(a)]);
        u.values.push_back(val);
    }
    u.breakpoints.push_back(t_end);
    return {u, dim};
}

void save_field_dump(const env::EnvironmentHandle& h, const std::vector<env::FieldSample>& s,
                     const std::string& path) {
    json head;
    head["kind"] = "environment_dump";
    head["version"] = 1;
    head["dim"] = h.spec.dimension;
    head["spec"] = h.spec.describe();
    head["seed"] = h.seed;
    auto f = open_out(path);
    f << head.dump() << "\n";
    for (int a = 0; a < h.spec.dimension; ++a) f << (a ? "," : "") << "y" << a;
    f << ",value\n";
    for (const auto& r : s) {
        for (int a = 0; a < h.spec.dimension; ++a)
            f << (a ? "," : "") << format_double(r.y[a]);
        f << "," << format_double(r.value) << "\n";
    }
}

void save_hamiltonian_table(const xform::HamiltonianTable& t, const std::string& path) {
    json head;
    head["kind"] = "hamiltonian_table";
    head["version"] = 1;
    head["dim"] = t.dim;
    head["model_hash"] = t.model_hash;
    head["control_radius"] = t.control_radius;
    head["axes"] = {{"t", axis_to_json(t.t)}};
    for (int a = 0; a < t.dim; ++a) {
        head["axes"]["x"].push_back(axis_to_json(t.x[static_cast<size_t>(a)]));
        head["axes"]["p"].push_back(axis_to_json(t.p[static_cast<size_t>(a)]));
    }
    auto f = open_out(path);
    f << head.dump() << "\n";
    f << "t";
    for (int a = 0; a < t.dim; ++a) f << ",x" << a;
    for (int a = 0; a < t.dim; ++a) f << ",p" << a;
    f << ",value\n";
    for (int it = 0; it < t.t.n; ++it) {
        IVec ix = IVec::zero(t.dim), ip = IVec::zero(t.dim);
        for (;;) {
            const std::size_t idx = t.index(it, ix, ip);
            f << format_double(t.t.at(it));
            for (int a = 0; a < t.dim; ++a)
                f << "," << format_double(t.x[a].at(static_cast<int>(ix[a])));
            for (int a = 0; a < t.dim; ++a)
                f << "," << format_double(t.p[a].at(static_cast<int>(ip[a])));
            f << "," << format_double(t.values[idx]) << "\n";
            int a = t.dim - 1;
            for (; a >= 0; --a) {
                if (++ip[a] < t.p[a].n) break;
                ip[a] = 0;
            }
            if (a >= 0) continue;
            a = t.dim - 1;
            for (; a >= 0; --a) {
                if (++ix[a] < t.x[a].n) break;
                ix[a] = 0;
            }
            if (a < 0) break;
        }
    }
}

model::UserDynamicsTable load_user_dynamics_csv(const std::string& path, int dim) {
    auto f = open_in(path);
    std::string line;
    std::getline(f, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (static_cast<int>(cells.size()) != 3 * dim)
            throw ConfigError("user dynamics: expected " + std::to_string(3 * dim) +
                              " columns (x..., u..., f...)");
        std::vector<double> r;
        for (const auto& c : cells) r.push_back(parse_double(c));
        rows.push_back(r);
    }
    if (rows.empty()) throw ConfigError("user dynamics: no samples in " + path);

    auto axis_of = [&](int col) {
        std::set<double> vals;
        for (const auto& r : rows) vals.insert(r[static_cast<size_t>(col)]);
        std::vector<double> v(vals.begin(), vals.end());
        LatticeAxis a;
        a.lo = v.front();
        a.n = static_cast<int>(v.size());
        a.step = a.n > 1 ? (v.back() - v.front()) / (a.n - 1) : 1.0;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (std::abs(v[i] - (a.lo + a.step * static_cast<double>(i))) >
                1e-9 * std::max(1.0, std::abs(a.step)))
                throw ConfigError("user dynamics: non-uniform lattice in column " +
                                  std::to_string(col));
        return a;
    };

    model::UserDynamicsTable t;
    t.dim = dim;
    for (int a = 0; a < dim; ++a) t.x_axes.push_back(axis_of(a));
    for (int a = 0; a < dim; ++a) t.u_axes.push_back(axis_of(dim + a));

    std::size_t total = 1;
    for (const auto& a : t.x_axes) total *= static_cast<size_t>(a.n);
    for (const auto& a : t.u_axes) total *= static_cast<size_t>(a.n);
    if (rows.size() != total)
        throw ConfigError("user dynamics: lattice incomplete (" + std::to_string(rows.size()) +
                          " rows, need " + std::to_string(total) + ")");
    t.values.assign(total, Vec::zero(dim));
    for (const auto& r : rows) {
        std::size_t idx = 0;
        for (int a = 0; a < dim; ++a) {
            const auto& ax = t.x_axes[static_cast<size_t>(a)];
            idx = idx * static_cast<size_t>(ax.n) +
                  static_cast<size_t>(std::llround((r[static_cast<size_t>(a)] - ax.lo) / ax.step));
        }
        for (int a = 0; a < dim; ++a) {
            const auto& ax = t.u_axes[static_cast<size_t>(a)];
            idx = idx * static_cast<size_t>(ax.n) +
                  static_cast<size_t>(
                      std::llround((r[static_cast<size_t>(dim + a)] - ax.lo) / ax.step));
        }
        Vec fv = Vec::zero(dim);
        for (int a = 0; a < dim; ++a) fv[a] = r[static_cast<size_t>(2 * dim + a)];
        t.values[idx] = fv;
    }
    return t;
}

std::string file_hash_hex(const std::string& path) {
    auto f = open_in(path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

void write_manifest(const std::string& dir, const std::vector<ManifestEntry>& inputs,
                    const std::vector<ManifestEntry>& outputs,
                    const std::vector<std::pair<std::string, std::string>>& notes) {
    json m;
    m["generated_by"] = "homogenize-lab";
    m["format_version"] = 1;
    for (const auto& e : inputs) m["inputs"].push_back({{"path", e.path}, {"fnv64", e.hash}});
    m["inputs"] = m.value("inputs", json::array());
    for (const auto& e : outputs)
        m["outputs"].push_back({{"path", e.path}, {"fnv64", e.hash}});
    m["outputs"] = m.value("outputs", json::array());
    for (const auto& [k, v] : notes) m["notes"][k] = v;
    auto f = open_out((fs::path(dir) / "manifest.json").string());
    f << m.dump(2) << "\n";
}

}  // namespace homlab::io
