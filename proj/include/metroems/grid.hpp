#pragma once

// Discretization utilities shared by the dynamic-programming solvers: 1-D
// axes with clamped linear interpolation, the station state grid, the finite
// control mesh with its canonical ordering, and persisted value tables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "model.hpp"

namespace metroems {

// ---------------------------------------------------------------------------
// Axis

/// Strictly increasing grid axis. Single-node axes are allowed (they pin a
/// coordinate); interpolation then ignores that dimension.
struct Axis {
    std::vector<double> nodes;

    int size() const { return static_cast<int>(nodes.size()); }
    double front() const { return nodes.front(); }
    double back() const { return nodes.back(); }

    void validate() const {
        if (nodes.empty()) throw std::invalid_argument("Axis: needs at least one node");
        for (size_t i = 1; i < nodes.size(); ++i)
            if (!(nodes[i] > nodes[i - 1]))
                throw std::invalid_argument("Axis: nodes must be strictly increasing");
    }

    static Axis uniform(double lo, double hi, int n) {
        if (n < 1) throw std::invalid_argument("Axis: n must be >= 1");
        Axis a;
        a.nodes.resize(n);
        if (n == 1) {
            a.nodes[0] = lo;
        } else {
            for (int i = 0; i < n; ++i)
                a.nodes[i] = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
            a.nodes[n - 1] = hi;
        }
        a.validate();
        return a;
    }

    /// Log-spaced axis for heavy-tailed quantities: nodes are
    /// exp(linspace(log eps, log(hi+eps))) - eps, so the first node is 0.
    static Axis log_spaced(double hi, int n, double eps) {
        if (n < 2) throw std::invalid_argument("Axis: log_spaced needs n >= 2");
        if (!(hi > 0) || !(eps > 0)) throw std::invalid_argument("Axis: log_spaced needs hi, eps > 0");
        Axis a;
        a.nodes.resize(n);
        const double lo_l = std::log(eps), hi_l = std::log(hi + eps);
        for (int i = 0; i < n; ++i) {
            const double l = lo_l + (hi_l - lo_l) * static_cast<double>(i) / (n - 1);
            a.nodes[i] = std::exp(l) - eps;
        }
        a.nodes[0] = 0.0;
        a.nodes[n - 1] = hi;
        a.validate();
        return a;
    }

    /// True when spacing is uniform to a tight relative tolerance; uniform
    /// axes get O(1) bracketing and shared stencils in the solvers.
    bool is_uniform() const {
        if (size() < 3) return true;
        const double h = nodes[1] - nodes[0];
        for (size_t i = 2; i < nodes.size(); ++i)
            if (std::abs((nodes[i] - nodes[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h)))
                return false;
        return true;
    }

    /// Clamped bracketing: returns (i, theta) with value ~ (1-theta)*nodes[i]
    /// + theta*nodes[i+1], theta in [0,1]. Out-of-range values clamp to the
    /// nearest end. Single-node axes always return (0, 0).
    struct Bracket {
        int i;
        double theta;
    };
    Bracket bracket(double v) const {
        const int n = size();
        if (n == 1) return {0, 0.0};
        if (v <= nodes.front()) return {0, 0.0};
        if (v >= nodes.back()) return {n - 2, 1.0};
        const auto it = std::upper_bound(nodes.begin(), nodes.end(), v);
        const int i = static_cast<int>(it - nodes.begin()) - 1;
        const int lo = std::min(i, n - 2);
        const double th = (v - nodes[lo]) / (nodes[lo + 1] - nodes[lo]);
        return {lo, std::clamp(th, 0.0, 1.0)};
    }

    /// Clamped linear interpolation of per-node values.
    double interpolate(const double* values, double v) const {
        const Bracket b = bracket(v);
        if (size() == 1) return values[0];
        return (1.0 - b.theta) * values[b.i] + b.theta * values[b.i + 1];
    }
};

// ---------------------------------------------------------------------------
// State grid

/// Product grid over (soc, pm10). Values are stored with the SOC index
/// fastest: flat index j*soc.size() + i.
struct StateGrid {
    Axis soc;
    Axis pm10;

    int size() const { return soc.size() * pm10.size(); }
    int flat(int i_soc, int j_pm10) const { return j_pm10 * soc.size() + i_soc; }

    State node(int i_soc, int j_pm10) const {
        return State{soc.nodes[i_soc], pm10.nodes[j_pm10]};
    }

    void validate() const {
        soc.validate();
        pm10.validate();
    }

    /// Clamped bilinear interpolation over a [pm10][soc] value plane.
    double interpolate(const double* plane, const State& x) const {
        const auto bs = soc.bracket(x.soc_kwh);
        const auto bc = pm10.bracket(x.pm10_ugm3);
        const int ns = soc.size();
        const int i1 = soc.size() == 1 ? bs.i : bs.i + 1;
        const int j1 = pm10.size() == 1 ? bc.i : bc.i + 1;
        const double v00 = plane[bc.i * ns + bs.i];
        const double v01 = plane[bc.i * ns + i1];
        const double v10 = plane[j1 * ns + bs.i];
        const double v11 = plane[j1 * ns + i1];
        const double lo = (1.0 - bs.theta) * v00 + bs.theta * v01;
        const double hi = (1.0 - bs.theta) * v10 + bs.theta * v11;
        return (1.0 - bc.theta) * lo + bc.theta * hi;
    }
};

// ---------------------------------------------------------------------------
// Control mesh

/// Finite control set: battery levels x {low, high}. Kept in a canonical
/// order so argmin ties resolve identically everywhere: sort by |battery|
/// ascending, then ventilation low before high, then battery value. The
/// cheapest-effort control is preferred on exact ties.
struct ControlMesh {
    std::vector<Control> controls;

    static ControlMesh battery_levels(double power_min_kw, double power_max_kw, int n_levels) {
        if (n_levels < 1) throw std::invalid_argument("ControlMesh: n_levels must be >= 1");
        std::vector<double> levels;
        if (n_levels == 1) {
            levels.push_back(0.0);
        } else {
            levels.reserve(n_levels);
            for (int i = 0; i < n_levels; ++i)
                levels.push_back(power_min_kw +
                                 (power_max_kw - power_min_kw) * static_cast<double>(i) / (n_levels - 1));
            // Snap the level nearest zero to exactly zero so "do nothing" is
            // always available.
            int i0 = 0;
            for (int i = 1; i < n_levels; ++i)
                if (std::abs(levels[i]) < std::abs(levels[i0])) i0 = i;
            levels[i0] = 0.0;
        }
        ControlMesh mesh;
        mesh.controls.reserve(levels.size() * 2);
        for (double b : levels) {
            mesh.controls.push_back(Control{b, VentMode::low});
            mesh.controls.push_back(Control{b, VentMode::high});
        }
        mesh.canonicalize();
        return mesh;
    }

    void canonicalize() {
        std::sort(controls.begin(), controls.end(), [](const Control& a, const Control& b) {
            const double aa = std::abs(a.battery_kw), ab = std::abs(b.battery_kw);
            if (aa != ab) return aa < ab;
            if (a.vent != b.vent) return a.vent == VentMode::low;
            return a.battery_kw < b.battery_kw;
        });
    }

    int size() const { return static_cast<int>(controls.size()); }
};

// ---------------------------------------------------------------------------
// Value tables

/// Bellman value functions V_t on the state grid, optionally augmented with
/// a noise axis (w-memory). Layout: plane(t) is [pm10][soc] with soc
/// fastest; augmented tables store [w][pm10][soc] per stage. Tables span
/// t = 0..T (T+1 stages).
struct ValueTable {
    StateGrid grid;
    Axis noise; // single-node axis {0} when not augmented
    int horizon_steps = 0;
    std::uint64_t model_hash = 0;
    std::vector<double> data;

    bool augmented() const { return noise.size() > 1; }
    int plane_size() const { return grid.size() * noise.size(); }

    static ValueTable zeros(StateGrid g, Axis noise_axis, int horizon_steps,
                            std::uint64_t model_hash) {
        ValueTable vt;
        vt.grid = std::move(g);
        vt.noise = std::move(noise_axis);
        vt.horizon_steps = horizon_steps;
        vt.model_hash = model_hash;
        vt.data.assign(static_cast<size_t>(vt.plane_size()) * (horizon_steps + 1), 0.0);
        return vt;
    }

    double* plane(int t) { return data.data() + static_cast<size_t>(t) * plane_size(); }
    const double* plane(int t) const {
        return data.data() + static_cast<size_t>(t) * plane_size();
    }
    /// Sub-plane at noise index l (the whole plane when not augmented).
    double* plane(int t, int l) { return plane(t) + static_cast<size_t>(l) * grid.size(); }
    const double* plane(int t, int l) const {
        return plane(t) + static_cast<size_t>(l) * grid.size();
    }

    /// Clamped multilinear interpolation: bilinear in state, then linear in
    /// the noise coordinate when augmented.
    double interpolate(int t, const State& x, double w = 0.0) const {
        if (!augmented()) return grid.interpolate(plane(t, 0), x);
        const auto bw = noise.bracket(w);
        const double lo = grid.interpolate(plane(t, bw.i), x);
        const double hi = grid.interpolate(plane(t, bw.i + 1), x);
        return (1.0 - bw.theta) * lo + bw.theta * hi;
    }

    // -- persistence ---------------------------------------------------------
    // Binary layout: 8-byte magic, u64 header length, JSON header (axes,
    // horizon, model hash), then raw little-endian doubles.

    static constexpr char magic[8] = {'M', 'E', 'M', 'S', 'V', 'T', '0', '1'};

    void save(const std::string& path) const {
        nlohmann::json header{{"soc", grid.soc.nodes},
                              {"pm10", grid.pm10.nodes},
                              {"noise", noise.nodes},
                              {"horizon_steps", horizon_steps},
                              {"model_hash", model_hash}};
        const std::string hs = header.dump();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("ValueTable: cannot open " + path + " for writing");
        out.write(magic, sizeof magic);
        const std::uint64_t hlen = hs.size();
        out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!out) throw std::runtime_error("ValueTable: short write to " + path);
    }

    static ValueTable load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("ValueTable: cannot open " + path);
        char got[8];
        in.read(got, sizeof got);
        if (!in || std::memcmp(got, magic, sizeof magic) != 0)
            throw std::runtime_error("ValueTable: bad magic in " + path);
        std::uint64_t hlen = 0;
        in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
        if (!in || hlen > (1u << 20)) throw std::runtime_error("ValueTable: bad header in " + path);
        std::string hs(hlen, '\0');
        in.read(hs.data(), static_cast<std::streamsize>(hlen));
        if (!in) throw std::runtime_error("ValueTable: truncated header in " + path);
        const nlohmann::json header = nlohmann::json::parse(hs);
        ValueTable vt;
        vt.grid.soc.nodes = header.at("soc").get<std::vector<double>>();
        vt.grid.pm10.nodes = header.at("pm10").get<std::vector<double>>();
        vt.noise.nodes = header.at("noise").get<std::vector<double>>();
        vt.horizon_steps = header.at("horizon_steps").get<int>();
        vt.model_hash = header.at("model_hash").get<std::uint64_t>();
        vt.grid.validate();
        vt.noise.validate();
        vt.data.resize(static_cast<size_t>(vt.plane_size()) * (vt.horizon_steps + 1));
        in.read(reinterpret_cast<char*>(vt.data.data()),
                static_cast<std::streamsize>(vt.data.size() * sizeof(double)));
        if (!in || in.gcount() != static_cast<std::streamsize>(vt.data.size() * sizeof(double)))
            throw std::runtime_error("ValueTable: truncated data in " + path);
        return vt;
    }
};

} // namespace metroems
