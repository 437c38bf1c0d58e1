#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "model.hpp"
#include "scenarios.hpp"

namespace metroems {

// ---------------------------------------------------------------------------
// Mixed-integer formulation of the deterministic window problem, for export
// to external solvers. The battery command is split as u_b = u⁺ + u⁻ with
// u⁺ ∈ [0, pmax] and u⁻ ∈ [pmin, 0], the vent mode is a binary u_v, and the
// bilinear term u_v·c is linearized through an auxiliary a with big-M bound
// C̄. The PM10 recursion is written without the floor at zero, which is
// equivalent whenever concentrations stay positive.

struct MilpColumn {
    std::string name;
    double lb = 0.0;
    double ub = 0.0;
    double obj = 0.0;
    bool integer = false;
};

struct MilpRow {
    std::string name;
    char sense = 'E';  // 'E' ==, 'L' <=, 'G' >=
    double rhs = 0.0;
    std::vector<std::pair<int, double>> terms;  // (column index, coefficient)
};

struct MilpEval {
    double objective = 0.0;
    double max_violation = 0.0;
};

struct MilpArtifact {
    std::string name = "MEMSWIN";
    std::vector<MilpColumn> cols;
    std::vector<MilpRow> rows;
    int t0 = 0;
    int horizon = 0;
    double big_m = 0.0;

    int column(const std::string& col_name) const {
        for (size_t j = 0; j < cols.size(); ++j)
            if (cols[j].name == col_name) return static_cast<int>(j);
        throw std::invalid_argument("MilpArtifact: unknown column " + col_name);
    }

    /// Objective value and worst constraint/bound/integrality violation of a
    /// full assignment (one value per column, in column order).
    MilpEval evaluate(const std::vector<double>& x) const {
        if (x.size() != cols.size())
            throw std::invalid_argument("MilpArtifact: assignment size mismatch");
        MilpEval ev;
        for (size_t j = 0; j < cols.size(); ++j) {
            ev.objective += cols[j].obj * x[j];
            ev.max_violation = std::max(ev.max_violation, cols[j].lb - x[j]);
            ev.max_violation = std::max(ev.max_violation, x[j] - cols[j].ub);
            if (cols[j].integer)
                ev.max_violation = std::max(ev.max_violation, std::fabs(x[j] - std::round(x[j])));
        }
        for (const MilpRow& r : rows) {
            double lhs = 0.0;
            for (const auto& [j, c] : r.terms) lhs += c * x[j];
            if (r.sense == 'E') ev.max_violation = std::max(ev.max_violation, std::fabs(lhs - r.rhs));
            if (r.sense == 'L') ev.max_violation = std::max(ev.max_violation, lhs - r.rhs);
            if (r.sense == 'G') ev.max_violation = std::max(ev.max_violation, r.rhs - lhs);
        }
        return ev;
    }
};

namespace detail {

inline std::string indexed_name(const char* stem, int r) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%s%04d", stem, r);
    return buf;
}

}  // namespace detail

/// Build the window MILP for stages t0..t0+h-1 from x0 under a point braking
/// forecast (entries for steps t0+1..t0+h). big_m must dominate every
/// reachable concentration; the start concentration is checked against it.
inline MilpArtifact build_milp(const StationModel& m, const DeterministicProfiles& profiles,
                               int t0, const State& x0,
                               const std::vector<double>& braking_forecast, int h,
                               double big_m) {
    const int T = m.grid.horizon_steps;
    if (t0 < 0 || t0 >= T) throw std::invalid_argument("build_milp: t0 out of range");
    if (h < 1 || t0 + h > T)
        throw std::invalid_argument("build_milp: window must satisfy 1 <= h <= T - t0");
    if (static_cast<int>(braking_forecast.size()) != h)
        throw std::invalid_argument("build_milp: forecast length must equal h");
    if (!(big_m > 0) || x0.pm10_ugm3 > big_m)
        throw std::invalid_argument("build_milp: big_m must be positive and dominate c0");
    profiles.validate(T);

    MilpArtifact a;
    a.t0 = t0;
    a.horizon = h;
    a.big_m = big_m;

    const double dt = m.grid.delta_hours;
    const double k_low = (m.air.rho_v / m.air.volume_m3) * m.vent.power_low_kw;
    const double k_diff = (m.air.rho_v / m.air.volume_m3) *
                          (m.vent.power_high_kw - m.vent.power_low_kw);
    const double inf = std::numeric_limits<double>::infinity();

    // Per step r: UV (vent binary), BP/BM (battery split), S/C (next state),
    // A (= u_v * c at step start), R (grid import).
    struct Ids {
        int uv, bp, bm, s, c, aa, r;
    };
    std::vector<Ids> ids(h);
    for (int r = 0; r < h; ++r) {
        const int s = t0 + r;
        const double tariff = m.econ.tariff_eur_per_kw[s];
        auto add = [&](const char* stem, double lb, double ub, double obj, bool integer) {
            a.cols.push_back({detail::indexed_name(stem, r), lb, ub, obj, integer});
            return static_cast<int>(a.cols.size()) - 1;
        };
        ids[r].uv = add("UV", 0.0, 1.0, 0.0, true);
        ids[r].bp = add("BP", 0.0, m.battery.power_max_kw, 0.0, false);
        ids[r].bm = add("BM", m.battery.power_min_kw, 0.0, 0.0, false);
        ids[r].s = add("S", m.battery.soc_min_kwh, m.battery.soc_max_kwh, 0.0, false);
        ids[r].c = add("C", 0.0, big_m, m.econ.lambda_comfort, false);
        ids[r].aa = add("A", 0.0, big_m, 0.0, false);
        ids[r].r = add("R", 0.0, inf, tariff, false);
    }

    for (int r = 0; r < h; ++r) {
        const int s = t0 + r;
        const NoiseVector wd = profiles.noise_at(s + 1, 0.0);
        const double n = wd.trains_per_hour;
        const double exch_low = k_low + m.air.beta * n;
        const double coef_prev = 1.0 - dt * (m.air.delta_dep + exch_low);
        const double gen = dt * m.air.alpha * n * n + dt * exch_low * wd.outdoor_pm10;
        const bool first = r == 0;
        const int c_prev = first ? -1 : ids[r - 1].c;

        MilpRow soc;
        soc.name = detail::indexed_name("SOC", r);
        soc.sense = 'E';
        soc.terms = {{ids[r].s, 1.0},
                     {ids[r].bp, -dt * m.battery.rho_c},
                     {ids[r].bm, -dt / m.battery.rho_d}};
        if (first)
            soc.rhs = x0.soc_kwh;
        else
            soc.terms.push_back({ids[r - 1].s, -1.0});
        a.rows.push_back(std::move(soc));

        MilpRow pm;
        pm.name = detail::indexed_name("PM", r);
        pm.sense = 'E';
        pm.terms = {{ids[r].c, 1.0},
                    {ids[r].aa, dt * k_diff},
                    {ids[r].uv, -dt * k_diff * wd.outdoor_pm10}};
        pm.rhs = gen;
        if (first)
            pm.rhs += coef_prev * x0.pm10_ugm3;
        else
            pm.terms.push_back({c_prev, -coef_prev});
        a.rows.push_back(std::move(pm));

        MilpRow aub;  // a <= C̄ u_v
        aub.name = detail::indexed_name("AUB", r);
        aub.sense = 'L';
        aub.terms = {{ids[r].aa, 1.0}, {ids[r].uv, -big_m}};
        a.rows.push_back(std::move(aub));

        MilpRow acb;  // a <= c_prev
        acb.name = detail::indexed_name("ACB", r);
        acb.sense = 'L';
        acb.terms = {{ids[r].aa, 1.0}};
        if (first)
            acb.rhs = x0.pm10_ugm3;
        else
            acb.terms.push_back({c_prev, -1.0});
        a.rows.push_back(std::move(acb));

        MilpRow alb;  // a >= c_prev - (1 - u_v) C̄
        alb.name = detail::indexed_name("ALB", r);
        alb.sense = 'G';
        alb.terms = {{ids[r].aa, 1.0}, {ids[r].uv, -big_m}};
        alb.rhs = -big_m;
        if (first)
            alb.rhs += x0.pm10_ugm3;
        else
            alb.terms.push_back({c_prev, -1.0});
        a.rows.push_back(std::move(alb));

        MilpRow imp;  // R >= d + P(u_v) + u_b - b̂
        imp.name = detail::indexed_name("IMP", r);
        imp.sense = 'G';
        imp.terms = {{ids[r].r, 1.0},
                     {ids[r].uv, -(m.vent.power_high_kw - m.vent.power_low_kw)},
                     {ids[r].bp, -1.0},
                     {ids[r].bm, -1.0}};
        imp.rhs = wd.demand_kw + m.vent.power_low_kw - braking_forecast[r];
        a.rows.push_back(std::move(imp));
    }
    return a;
}

/// Map an open-loop control sequence into a full MILP assignment: states are
/// replayed through the exact dynamics, the battery command is split by sign,
/// a is the literal product u_v·c, and R is the positive part of the import.
inline std::vector<double> milp_assignment(const MilpArtifact& art, const StationModel& m,
                                           const DeterministicProfiles& profiles,
                                           const State& x0,
                                           const std::vector<double>& braking_forecast,
                                           const std::vector<Control>& controls) {
    if (static_cast<int>(controls.size()) != art.horizon)
        throw std::invalid_argument("milp_assignment: control count must equal the window");
    std::vector<double> x(art.cols.size(), 0.0);
    State st = x0;
    for (int r = 0; r < art.horizon; ++r) {
        const int s = art.t0 + r;
        const Control& u = controls[r];
        const NoiseVector w = profiles.noise_at(s + 1, braking_forecast[r]);
        const State st1 = dynamics(m, s, st, u, w);
        const double imp = import_power(m, u, w);
        const size_t b = static_cast<size_t>(r) * 7;  // column block for step r
        x[b + 0] = u.vent == VentMode::high ? 1.0 : 0.0;
        x[b + 1] = std::max(u.battery_kw, 0.0);
        x[b + 2] = std::min(u.battery_kw, 0.0);
        x[b + 3] = st1.soc_kwh;
        x[b + 4] = st1.pm10_ugm3;
        x[b + 5] = x[b + 0] * st.pm10_ugm3;
        x[b + 6] = std::max(imp, 0.0);
        st = st1;
    }
    return x;
}

// ---------------------------------------------------------------------------
// Fixed-format MPS export (fields at columns 2-3, 5-12, 15-22, 25-36, 40-47,
// 50-61; names at most 8 characters) plus a minimal reader for round-trips.

namespace detail {

inline std::string mps_number(double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.6G", v);
    return buf;
}

inline std::string mps_line(const std::string& f1, const std::string& f2,
                            const std::string& f3, const std::string& f4 = "",
                            const std::string& f5 = "", const std::string& f6 = "") {
    std::string line;
    auto place = [&line](size_t col, const std::string& s) {
        if (s.empty()) return;
        if (line.size() < col) line.resize(col, ' ');
        line += s;
    };
    place(1, f1);
    place(4, f2);
    place(14, f3);
    place(24, f4);
    place(39, f5);
    place(49, f6);
    return line + "\n";
}

}  // namespace detail

inline void export_mps(const MilpArtifact& a, std::ostream& out) {
    for (const MilpColumn& c : a.cols)
        if (c.name.size() > 8) throw std::invalid_argument("export_mps: column name too long");
    for (const MilpRow& r : a.rows)
        if (r.name.size() > 8) throw std::invalid_argument("export_mps: row name too long");

    out << "NAME          " << a.name << "\n";
    out << "OBJSENSE\n    MIN\n";
    out << "ROWS\n";
    out << detail::mps_line("N", "COST", "");
    for (const MilpRow& r : a.rows)
        out << detail::mps_line(std::string(1, r.sense), r.name, "");

    // Column entries grouped per column; integer columns first inside one
    // INTORG/INTEND marker pair.
    std::vector<std::vector<std::pair<std::string, double>>> entries(a.cols.size());
    for (size_t j = 0; j < a.cols.size(); ++j)
        if (a.cols[j].obj != 0.0) entries[j].push_back({"COST", a.cols[j].obj});
    for (const MilpRow& r : a.rows)
        for (const auto& [j, coef] : r.terms) entries[j].push_back({r.name, coef});

    out << "COLUMNS\n";
    auto emit_column = [&](size_t j) {
        for (const auto& [row, coef] : entries[j])
            out << detail::mps_line("", a.cols[j].name, row, detail::mps_number(coef));
    };
    out << detail::mps_line("", "M1", "'MARKER'", "", "'INTORG'");
    for (size_t j = 0; j < a.cols.size(); ++j)
        if (a.cols[j].integer) emit_column(j);
    out << detail::mps_line("", "M2", "'MARKER'", "", "'INTEND'");
    for (size_t j = 0; j < a.cols.size(); ++j)
        if (!a.cols[j].integer) emit_column(j);

    out << "RHS\n";
    for (const MilpRow& r : a.rows)
        if (r.rhs != 0.0)
            out << detail::mps_line("", "RHS", r.name, detail::mps_number(r.rhs));

    out << "BOUNDS\n";
    const double inf = std::numeric_limits<double>::infinity();
    for (const MilpColumn& c : a.cols) {
        if (c.integer && c.lb == 0.0 && c.ub == 1.0) {
            out << detail::mps_line("BV", "BND", c.name);
            continue;
        }
        if (c.lb != 0.0)
            out << detail::mps_line("LO", "BND", c.name, detail::mps_number(c.lb));
        if (c.ub < inf)
            out << detail::mps_line("UP", "BND", c.name, detail::mps_number(c.ub));
    }
    out << "ENDATA\n";
}

inline void export_mps(const MilpArtifact& a, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_mps: cannot open " + path);
    export_mps(a, out);
}

/// Section and entity counts recovered from an MPS file, for round-trip
/// checks against the artifact that produced it.
struct MpsSummary {
    std::string name;
    std::string objsense;
    int n_rows = 0;     // constraint rows, objective excluded
    int n_objective_rows = 0;
    int n_cols = 0;
    int n_integer = 0;
    int n_rhs_entries = 0;
    int n_bound_entries = 0;
    bool has_endata = false;
};

inline MpsSummary parse_mps(std::istream& in) {
    MpsSummary s;
    std::string line, section;
    std::vector<std::string> seen_cols;
    bool in_integer = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string w; ls >> w;) tok.push_back(w);
        if (tok.empty()) continue;
        if (line[0] != ' ') {  // section header
            section = tok[0];
            if (section == "NAME" && tok.size() > 1) s.name = tok[1];
            if (section == "ENDATA") s.has_endata = true;
            continue;
        }
        if (section == "OBJSENSE") {
            s.objsense = tok[0];
        } else if (section == "ROWS") {
            if (tok.size() < 2) throw std::runtime_error("parse_mps: bad ROWS line");
            if (tok[0] == "N")
                ++s.n_objective_rows;
            else
                ++s.n_rows;
        } else if (section == "COLUMNS") {
            if (tok.size() >= 3 && tok[1] == "'MARKER'") {
                in_integer = tok.back() == "'INTORG'";
                continue;
            }
            if (tok.size() < 3) throw std::runtime_error("parse_mps: bad COLUMNS line");
            if (seen_cols.empty() || seen_cols.back() != tok[0]) {
                seen_cols.push_back(tok[0]);
                ++s.n_cols;
                if (in_integer) ++s.n_integer;
            }
        } else if (section == "RHS") {
            s.n_rhs_entries += static_cast<int>((tok.size() - 1) / 2);
        } else if (section == "BOUNDS") {
            ++s.n_bound_entries;
        }
    }
    if (!s.has_endata) throw std::runtime_error("parse_mps: missing ENDATA");
    return s;
}

inline MpsSummary parse_mps(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("parse_mps: cannot open " + path);
    return parse_mps(in);
}

}  // namespace metroems
