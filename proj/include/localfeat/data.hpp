// Copyright 2026 The localfeat Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "localfeat/core.hpp"

namespace localfeat {

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class InvalidMesh : public Error {
public:
    using Error::Error;
};

class InvalidSpec : public Error {
public:
    using Error::Error;
};

class InvalidDataset : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Triangle meshes and OFF
// ---------------------------------------------------------------------------

struct TriangleMesh {
    std::vector<Point3> vertices;
    std::vector<std::array<std::size_t, 3>> faces;

    friend bool operator==(const TriangleMesh&, const TriangleMesh&) = default;
};

namespace detail {

/// Non-blank, comment-stripped lines with their 1-based line numbers.
struct TextLine {
    std::size_t number;
    std::string_view text;
};

inline std::vector<TextLine> content_lines(std::string_view text) {
    std::vector<TextLine> out;
    std::size_t number = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        ++number;
        std::string_view line = text.substr(pos, end - pos);
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first != std::string_view::npos) {
            const auto last = line.find_last_not_of(" \t\r");
            out.push_back({number, line.substr(first, last - first + 1)});
        }
        if (end == text.size()) break;
        pos = end + 1;
    }
    return out;
}

inline std::vector<std::string_view> split_tokens(std::string_view line, std::string_view separators) {
    std::vector<std::string_view> tokens;
    std::size_t pos = 0;
    while (pos < line.size()) {
        const auto start = line.find_first_not_of(separators, pos);
        if (start == std::string_view::npos) break;
        auto end = line.find_first_of(separators, start);
        if (end == std::string_view::npos) end = line.size();
        tokens.push_back(line.substr(start, end - start));
        pos = end;
    }
    return tokens;
}

inline double parse_real(std::string_view tok, std::size_t line) {
    double v = 0.0;
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
        throw ParseError("expected a number, got '" + std::string(tok) + "'", line);
    return v;
}

inline std::size_t parse_count(std::string_view tok, std::size_t line) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError("expected a non-negative integer, got '" + std::string(tok) + "'", line);
    return v;
}

}  // namespace detail

/// Parses an OFF mesh. The "OFF" keyword is optional and may be fused with
/// the counts ("OFF492 1000 0"). Polygons are fan-triangulated.
[[nodiscard]] inline TriangleMesh parse_off(std::string_view text) {
    const auto lines = detail::content_lines(text);
    if (lines.empty()) throw ParseError("empty OFF input", 1);

    std::size_t cursor = 0;
    std::string_view counts_text = lines[0].text;
    std::size_t counts_line = lines[0].number;
    if (counts_text.starts_with("OFF")) {
        counts_text.remove_prefix(3);
        if (counts_text.find_first_not_of(" \t") == std::string_view::npos) {
            if (lines.size() < 2) throw ParseError("missing vertex/face counts", lines[0].number);
            cursor = 1;
            counts_text = lines[1].text;
            counts_line = lines[1].number;
        }
    }
    ++cursor;

    const auto counts = detail::split_tokens(counts_text, " \t");
    if (counts.size() < 2) throw ParseError("counts line needs vertex and face counts", counts_line);
    const std::size_t nv = detail::parse_count(counts[0], counts_line);
    const std::size_t nf = detail::parse_count(counts[1], counts_line);
    if (counts.size() >= 3) (void)detail::parse_count(counts[2], counts_line);

    const std::size_t last_line = lines.back().number;
    auto next_line = [&](const char* what) -> const detail::TextLine& {
        if (cursor >= lines.size()) throw ParseError(std::string("unexpected end of input, expected ") + what, last_line);
        return lines[cursor++];
    };

    TriangleMesh mesh;
    mesh.vertices.reserve(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        const auto& line = next_line("a vertex");
        const auto tok = detail::split_tokens(line.text, " \t");
        if (tok.size() < 3) throw ParseError("vertex needs three coordinates", line.number);
        mesh.vertices.push_back({detail::parse_real(tok[0], line.number), detail::parse_real(tok[1], line.number),
                                 detail::parse_real(tok[2], line.number)});
    }
    mesh.faces.reserve(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        const auto& line = next_line("a face");
        const auto tok = detail::split_tokens(line.text, " \t");
        if (tok.empty()) throw ParseError("empty face", line.number);
        const std::size_t arity = detail::parse_count(tok[0], line.number);
        if (arity < 3) throw ParseError("face needs at least three vertices", line.number);
        if (tok.size() < arity + 1) throw ParseError("face lists fewer indices than its arity", line.number);
        std::vector<std::size_t> idx(arity);
        for (std::size_t j = 0; j < arity; ++j) {
            idx[j] = detail::parse_count(tok[j + 1], line.number);
            if (idx[j] >= nv)
                throw ParseError("vertex index " + std::to_string(idx[j]) + " out of range", line.number);
        }
        for (std::size_t j = 1; j + 1 < arity; ++j) mesh.faces.push_back({idx[0], idx[j], idx[j + 1]});
    }
    return mesh;
}

/// Writes a triangle-only OFF file with round-trip precision.
[[nodiscard]] inline std::string serialize_off(const TriangleMesh& mesh) {
    std::ostringstream os;
    os.precision(17);
    os << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
    for (const Point3& v : mesh.vertices) os << v.x << ' ' << v.y << ' ' << v.z << '\n';
    for (const auto& f : mesh.faces) os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    return os.str();
}

[[nodiscard]] inline double triangle_area(const Point3& a, const Point3& b, const Point3& c) {
    const Point3 u = b - a;
    const Point3 v = c - a;
    const Point3 n{u.y * v.z - u.z * v.y, u.z * v.x - u.x * v.z, u.x * v.y - u.y * v.x};
    return 0.5 * n.norm();
}

/// Area-weighted face choice, uniform barycentric point within the face.
[[nodiscard]] inline PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, Rng& rng) {
    if (n == 0) throw InvalidRequest("sample_surface: n must be >= 1");
    std::vector<double> cumulative;
    cumulative.reserve(mesh.faces.size());
    double total = 0.0;
    for (const auto& f : mesh.faces) {
        for (std::size_t v : f)
            if (v >= mesh.vertices.size()) throw InvalidMesh("face index out of range");
        total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        cumulative.push_back(total);
    }
    if (!(total > 0.0) || !std::isfinite(total)) throw InvalidMesh("mesh has zero total area");

    std::vector<Point3> pts;
    pts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform() * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end()) --it;
        const auto& f = mesh.faces[static_cast<std::size_t>(it - cumulative.begin())];
        double r1 = rng.uniform();
        double r2 = rng.uniform();
        if (r1 + r2 > 1.0) {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        const Point3& a = mesh.vertices[f[0]];
        pts.push_back(a + r1 * (mesh.vertices[f[1]] - a) + r2 * (mesh.vertices[f[2]] - a));
    }
    return PointCloud(std::move(pts));
}

// ---------------------------------------------------------------------------
// XYZ text
// ---------------------------------------------------------------------------

struct XyzLoad {
    PointCloud cloud;
    std::vector<std::string> warnings;
};

/// One point per line, whitespace- or comma-separated. Columns after the
/// third are ignored and reported once in `warnings`.
[[nodiscard]] inline XyzLoad load_xyz(std::string_view text) {
    std::vector<Point3> pts;
    std::vector<std::string> warnings;
    for (const auto& line : detail::content_lines(text)) {
        const auto tok = detail::split_tokens(line.text, " \t,;");
        if (tok.size() < 3) throw ParseError("expected three coordinates", line.number);
        pts.push_back({detail::parse_real(tok[0], line.number), detail::parse_real(tok[1], line.number),
                       detail::parse_real(tok[2], line.number)});
        if (tok.size() > 3 && warnings.empty())
            warnings.push_back("line " + std::to_string(line.number) + ": ignoring " + std::to_string(tok.size() - 3) +
                               " extra column(s)");
    }
    if (pts.empty()) throw ParseError("no points in input", 1);
    return {PointCloud(std::move(pts)), std::move(warnings)};
}

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

enum class ShapeFamily { sphere, cube, cylinder, cone, torus, plane, pyramid, helix };

inline constexpr std::array<ShapeFamily, 8> kAllFamilies{ShapeFamily::sphere, ShapeFamily::cube,  ShapeFamily::cylinder,
                                                         ShapeFamily::cone,   ShapeFamily::torus, ShapeFamily::plane,
                                                         ShapeFamily::pyramid, ShapeFamily::helix};

[[nodiscard]] inline std::string_view to_string(ShapeFamily f) noexcept {
    switch (f) {
        case ShapeFamily::sphere: return "sphere";
        case ShapeFamily::cube: return "cube";
        case ShapeFamily::cylinder: return "cylinder";
        case ShapeFamily::cone: return "cone";
        case ShapeFamily::torus: return "torus";
        case ShapeFamily::plane: return "plane";
        case ShapeFamily::pyramid: return "pyramid";
        case ShapeFamily::helix: return "helix";
    }
    return "sphere";
}

[[nodiscard]] inline ShapeFamily shape_family_from_string(std::string_view s) {
    for (ShapeFamily f : kAllFamilies)
        if (to_string(f) == s) return f;
    throw InvalidSpec("unknown shape family '" + std::string(s) + "'");
}

struct SyntheticSpec {
    std::vector<ShapeFamily> classes{kAllFamilies.begin(), kAllFamilies.end()};
    std::size_t per_class = 50;
    std::size_t points = 512;
    double noise = 0.02;
    std::uint64_t seed = 0;

    void validate() const {
        if (classes.empty()) throw InvalidSpec("synthetic spec needs at least one class");
        for (std::size_t i = 0; i < classes.size(); ++i)
            for (std::size_t j = i + 1; j < classes.size(); ++j)
                if (classes[i] == classes[j]) throw InvalidSpec("duplicate shape family in synthetic spec");
        if (per_class < 1) throw InvalidSpec("per-class count must be >= 1");
        if (points < 8) throw InvalidSpec("clouds need at least 8 points");
        if (!(noise >= 0.0) || !std::isfinite(noise)) throw InvalidSpec("noise must be >= 0");
    }
};

struct DatasetSplit {
    std::vector<PointCloud> train;
    std::vector<PointCloud> val;
    std::vector<PointCloud> test;
    std::vector<std::string> class_names;

    [[nodiscard]] std::size_t num_classes() const noexcept { return class_names.size(); }
};

namespace detail {

inline Point3 random_unit_vector(Rng& rng) {
    for (;;) {
        const Point3 p{rng.normal(), rng.normal(), rng.normal()};
        const double n = p.norm();
        if (n > 1e-12) return {p.x / n, p.y / n, p.z / n};
    }
}

inline TriangleMesh cube_mesh(double h) {
    TriangleMesh m;
    for (int i = 0; i < 8; ++i) m.vertices.push_back({(i & 1) ? h : -h, (i & 2) ? h : -h, (i & 4) ? h : -h});
    const std::array<std::array<std::size_t, 4>, 6> quads{{{0, 1, 3, 2}, {4, 6, 7, 5}, {0, 4, 5, 1},
                                                           {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 5, 7, 3}}};
    for (const auto& q : quads) {
        m.faces.push_back({q[0], q[1], q[2]});
        m.faces.push_back({q[0], q[2], q[3]});
    }
    return m;
}

inline TriangleMesh pyramid_mesh() {
    TriangleMesh m;
    m.vertices = {{-0.45, -0.45, -0.5}, {0.45, -0.45, -0.5}, {0.45, 0.45, -0.5}, {-0.45, 0.45, -0.5}, {0.0, 0.0, 0.9}};
    m.faces = {{0, 1, 2}, {0, 2, 3}, {0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 0, 4}};
    return m;
}

/// Surface sample of a family in its canonical pose (fits the unit ball).
inline std::vector<Point3> sample_family(ShapeFamily family, std::size_t n, Rng& rng) {
    std::vector<Point3> pts;
    pts.reserve(n);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    switch (family) {
        case ShapeFamily::sphere: {
            // Antipodal pairs (plus one zero-sum triple when n is odd) put the
            // sample centroid exactly at the origin.
            if (n % 2 == 1) {
                const Point3 u = random_unit_vector(rng);
                Point3 v = random_unit_vector(rng);
                const double dot = u.x * v.x + u.y * v.y + u.z * v.z;
                v = v - dot * u;
                const double vn = v.norm();
                v = Point3{v.x / vn, v.y / vn, v.z / vn};
                const double c = -0.5, s = std::sqrt(3.0) / 2.0;
                pts.push_back(u);
                pts.push_back(c * u + s * v);
                pts.push_back(c * u + (-s) * v);
            }
            while (pts.size() < n) {
                const Point3 p = random_unit_vector(rng);
                pts.push_back(p);
                pts.push_back(Point3{-p.x, -p.y, -p.z});
            }
            break;
        }
        case ShapeFamily::cube: {
            const PointCloud c = sample_surface(cube_mesh(0.6), n, rng);
            return {c.begin(), c.end()};
        }
        case ShapeFamily::pyramid: {
            const PointCloud c = sample_surface(pyramid_mesh(), n, rng);
            return {c.begin(), c.end()};
        }
        case ShapeFamily::cylinder: {
            const double r = 0.35, h = 0.9;
            const double lateral = two_pi * r * 2.0 * h, caps = 2.0 * std::numbers::pi * r * r;
            for (std::size_t i = 0; i < n; ++i) {
                const double t = rng.uniform(0.0, two_pi);
                if (rng.uniform() * (lateral + caps) < lateral) {
                    pts.push_back({r * std::cos(t), r * std::sin(t), rng.uniform(-h, h)});
                } else {
                    const double rho = r * std::sqrt(rng.uniform());
                    pts.push_back({rho * std::cos(t), rho * std::sin(t), rng.uniform() < 0.5 ? -h : h});
                }
            }
            break;
        }
        case ShapeFamily::cone: {
            const double r = 0.85, z0 = -0.3, z1 = 0.4;
            const double slant = std::hypot(r, z1 - z0);
            const double lateral = std::numbers::pi * r * slant, base = std::numbers::pi * r * r;
            for (std::size_t i = 0; i < n; ++i) {
                const double t = rng.uniform(0.0, two_pi);
                if (rng.uniform() * (lateral + base) < lateral) {
                    const double f = std::sqrt(rng.uniform());  // distance from apex, density ~ f
                    pts.push_back({f * r * std::cos(t), f * r * std::sin(t), z1 - f * (z1 - z0)});
                } else {
                    const double rho = r * std::sqrt(rng.uniform());
                    pts.push_back({rho * std::cos(t), rho * std::sin(t), z0});
                }
            }
            break;
        }
        case ShapeFamily::torus: {
            const double big = 0.7, small = 0.25;
            while (pts.size() < n) {
                const double u = rng.uniform(0.0, two_pi);
                const double v = rng.uniform(0.0, two_pi);
                if (rng.uniform() * (big + small) > big + small * std::cos(v)) continue;
                const double ring = big + small * std::cos(v);
                pts.push_back({ring * std::cos(u), ring * std::sin(u), small * std::sin(v)});
            }
            break;
        }
        case ShapeFamily::plane: {
            for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), 0.0});
            break;
        }
        case ShapeFamily::helix: {
            const double turns = 3.0, radius = 0.5, tube = 0.06;
            for (std::size_t i = 0; i < n; ++i) {
                const double t = rng.uniform(0.0, turns * two_pi);
                const Point3 offset = random_unit_vector(rng);
                pts.push_back(Point3{radius * std::cos(t), radius * std::sin(t), -0.7 + 1.4 * t / (turns * two_pi)} +
                              tube * offset);
            }
            break;
        }
    }
    return pts;
}

/// Rotation about z by `yaw` followed by a tilt about x by `tilt`.
inline Point3 rotate(const Point3& p, double yaw, double tilt) {
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    const Point3 q{cy * p.x - sy * p.y, sy * p.x + cy * p.y, p.z};
    const double ct = std::cos(tilt), st = std::sin(tilt);
    return {q.x, ct * q.y - st * q.z, st * q.y + ct * q.z};
}

}  // namespace detail

/// One labeled synthetic cloud: canonical surface sample, isotropic scale
/// jitter, random yaw and a small tilt, Gaussian noise, then unit-sphere
/// normalization.
[[nodiscard]] inline PointCloud synthesize_cloud(ShapeFamily family, std::size_t points, double noise, Rng& rng,
                                                 int label) {
    auto pts = detail::sample_family(family, points, rng);
    const double scale = rng.uniform(0.8, 1.2);
    const double yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double tilt = rng.uniform(-std::numbers::pi / 12.0, std::numbers::pi / 12.0);
    for (Point3& p : pts) {
        p = detail::rotate(scale * p, yaw, tilt);
        if (noise > 0.0) p = p + Point3{noise * rng.normal(), noise * rng.normal(), noise * rng.normal()};
    }
    return normalize_unit_sphere(PointCloud(std::move(pts), label));
}

/// Per-class 70/15/15 split: round(0.7 c) clouds train, the rest halves
/// between val and test with the odd one going to val for even class ids and
/// to test for odd ones.
[[nodiscard]] inline std::array<std::size_t, 3> stratified_counts(std::size_t count, std::size_t class_id) {
    const auto train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(count)));
    const std::size_t rest = count - std::min(train, count);
    std::size_t val = rest / 2;
    if (rest % 2 == 1 && class_id % 2 == 0) ++val;
    return {std::min(train, count), val, rest - val};
}

[[nodiscard]] inline DatasetSplit generate(const SyntheticSpec& spec) {
    spec.validate();
    DatasetSplit split;
    const Rng root(spec.seed);
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        split.class_names.emplace_back(to_string(spec.classes[c]));
        const auto counts = stratified_counts(spec.per_class, c);
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            Rng rng = root.split(static_cast<std::uint64_t>(c) << 32 | i);
            PointCloud cloud = synthesize_cloud(spec.classes[c], spec.points, spec.noise, rng, static_cast<int>(c));
            if (i < counts[0]) split.train.push_back(std::move(cloud));
            else if (i < counts[0] + counts[1]) split.val.push_back(std::move(cloud));
            else split.test.push_back(std::move(cloud));
        }
    }
    return split;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

[[nodiscard]] inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidDataset("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Loads `<root>/<class_name>/<split>/<file>`. Class ids follow the sorted
/// class names; OFF meshes are surface-sampled to `points` points. Every
/// cloud is normalized to the unit sphere.
[[nodiscard]] inline DatasetSplit load_directory(const std::filesystem::path& root, std::size_t points,
                                                 std::uint64_t seed) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw InvalidDataset("dataset root " + root.string() + " is not a directory");
    DatasetSplit split;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) split.class_names.push_back(entry.path().filename().string());
    std::sort(split.class_names.begin(), split.class_names.end());
    if (split.class_names.empty()) throw InvalidDataset("no class directories under " + root.string());

    const Rng base(seed);
    std::uint64_t file_counter = 0;
    for (std::size_t c = 0; c < split.class_names.size(); ++c) {
        for (const char* name : {"train", "val", "test"}) {
            const fs::path dir = root / split.class_names[c] / name;
            if (!fs::is_directory(dir)) continue;
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(dir))
                if (e.is_regular_file()) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            auto& target = std::string_view(name) == "train" ? split.train
                           : std::string_view(name) == "val" ? split.val
                                                             : split.test;
            for (const auto& file : files) {
                const std::string text = read_text_file(file);
                const std::string ext = file.extension().string();
                PointCloud cloud;
                try {
                    if (ext == ".off" || ext == ".OFF") {
                        Rng rng = base.split(file_counter);
                        cloud = sample_surface(parse_off(text), points, rng);
                    } else {
                        cloud = load_xyz(text).cloud;
                    }
                } catch (const ParseError& e) {
                    throw InvalidDataset(file.string() + ": " + e.what());
                }
                ++file_counter;
                target.push_back(normalize_unit_sphere(cloud).with_label(static_cast<int>(c)));
            }
        }
    }
    std::vector<bool> in_train(split.class_names.size(), false);
    for (const auto& cloud : split.train) in_train[static_cast<std::size_t>(*cloud.label())] = true;
    for (std::size_t c = 0; c < in_train.size(); ++c)
        if (!in_train[c]) throw InvalidDataset("class '" + split.class_names[c] + "' has no training clouds");
    return split;
}

}  // namespace localfeat
