#pragma once

// Run-directory artifacts: text files, SHA-256 manifests and standalone SVG
// plots (heatmaps of distance matrices, line plots of per-epoch series).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "aegis/errors.hpp"

namespace aegis::report {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw ArtifactError("cannot read " + p.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline void write_file(const fs::path& p, const std::string& content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw ArtifactError("cannot write " + p.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw ArtifactError("write failed for " + p.string());
}

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw ArtifactError("sha256: digest failed");
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
    return hex;
}

// ---------------------------------------------------------------------------
// MANIFEST: one "<sha256>  <relative path>" line per file, sorted by path.

inline constexpr const char* kManifestName = "MANIFEST";

inline std::vector<std::string> list_files(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string rel = fs::relative(e.path(), dir).generic_string();
        if (rel != kManifestName) out.push_back(rel);
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline std::string write_manifest(const fs::path& dir) {
    std::string body;
    for (const auto& rel : list_files(dir)) body += sha256_hex(read_file(dir / rel)) + "  " + rel + "\n";
    write_file(dir / kManifestName, body);
    return body;
}

/// Every listed file exists with the listed hash, and no unlisted file is present.
inline void verify_manifest(const fs::path& dir) {
    const fs::path mp = dir / kManifestName;
    if (!fs::exists(mp)) throw ArtifactError("missing MANIFEST in " + dir.string());
    std::istringstream in(read_file(mp));
    std::string line;
    std::vector<std::string> listed;
    while (std::getline(in, line)) {
        if (line.size() < 67 || line.substr(64, 2) != "  ")
            throw ArtifactError("corrupt MANIFEST line in " + dir.string() + ": '" + line + "'");
        const std::string hash = line.substr(0, 64);
        const std::string rel = line.substr(66);
        const fs::path p = dir / rel;
        if (!fs::exists(p)) throw ArtifactError("MANIFEST lists missing file " + p.string());
        if (sha256_hex(read_file(p)) != hash) throw ArtifactError("hash mismatch for " + p.string());
        listed.push_back(rel);
    }
    std::sort(listed.begin(), listed.end());
    if (listed != list_files(dir)) throw ArtifactError("MANIFEST does not cover the files in " + dir.string());
}

// ---------------------------------------------------------------------------
// SVG

namespace detail {

inline std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '&': o += "&amp;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

/// White to dark blue.
inline std::string ramp(double t) {
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    const int r = static_cast<int>(std::lround(255 - 227 * t));
    const int g = static_cast<int>(std::lround(255 - 185 * t));
    const int b = static_cast<int>(std::lround(255 - 105 * t));
    return fmt::format("#{:02x}{:02x}{:02x}", r, g, b);
}

}  // namespace detail

inline std::string heatmap_svg(const std::vector<std::vector<double>>& m, const std::vector<std::string>& row_names,
                               const std::vector<std::string>& col_names, const std::string& title) {
    if (m.size() != row_names.size()) throw ShapeError("heatmap: row label count differs from matrix rows");
    for (const auto& r : m)
        if (r.size() != col_names.size()) throw ShapeError("heatmap: ragged matrix or wrong column labels");
    const int cell = 48, left = 90, top = 60;
    const int w = left + cell * static_cast<int>(col_names.size()) + 20;
    const int h = top + cell * static_cast<int>(row_names.size()) + 20;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& r : m)
        for (double v : r)
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    if (!(hi > lo)) {
        lo = std::isfinite(lo) ? lo : 0.0;
        hi = lo + 1.0;
    }
    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
        "font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        "<text x=\"{}\" y=\"20\" font-size=\"14\">{}</text>\n",
        w, h, left, detail::escape(title));
    for (std::size_t j = 0; j < col_names.size(); ++j)
        s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                         left + cell * static_cast<int>(j) + cell / 2, top - 8, detail::escape(col_names[j]));
    for (std::size_t i = 0; i < row_names.size(); ++i) {
        const int y = top + cell * static_cast<int>(i);
        s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", left - 8, y + cell / 2 + 4,
                         detail::escape(row_names[i]));
        for (std::size_t j = 0; j < col_names.size(); ++j) {
            const double v = m[i][j];
            const double t = (v - lo) / (hi - lo);
            const int x = left + cell * static_cast<int>(j);
            s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#999\"/>\n", x,
                             y, cell, cell, detail::ramp(t));
            s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{}\">{:.3g}</text>\n",
                             x + cell / 2, y + cell / 2 + 4, t > 0.6 ? "white" : "black", v);
        }
    }
    s += "</svg>\n";
    return s;
}

struct Series {
    std::string name;
    std::vector<double> y;
};

inline std::string line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                                 const std::string& ylabel) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
    const int w = 640, h = 360, left = 60, right = 150, top = 40, bottom = 45;
    const int pw = w - left - right, ph = h - top - bottom;
    std::size_t n = 0;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : series) {
        n = std::max(n, s.y.size());
        for (double v : s.y)
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    }
    if (!(hi > lo)) {
        lo = std::isfinite(lo) ? lo - 0.5 : 0.0;
        hi = lo + 1.0;
    }
    const auto px = [&](std::size_t i) { return left + (n > 1 ? pw * static_cast<double>(i) / (n - 1) : 0.0); };
    const auto py = [&](double v) { return top + ph * (hi - v) / (hi - lo); };
    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
        "font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        "<text x=\"{}\" y=\"22\" font-size=\"14\">{}</text>\n"
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n"
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n"
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>\n"
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n"
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n",
        w, h, left, detail::escape(title), left, top, pw, ph, left + pw / 2, h - 10, detail::escape(xlabel),
        top + ph / 2, top + ph / 2, detail::escape(ylabel), left - 4, top + 4, hi, left - 4, top + ph, lo);
    if (lo < 0.0 && hi > 0.0)
        s += fmt::format("<line x1=\"{}\" y1=\"{:.2f}\" x2=\"{}\" y2=\"{:.2f}\" stroke=\"#bbb\" "
                         "stroke-dasharray=\"4 3\"/>\n",
                         left, py(0.0), left + pw, py(0.0));
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* col = colors[k % std::size(colors)];
        std::string pts;
        for (std::size_t i = 0; i < series[k].y.size(); ++i)
            if (std::isfinite(series[k].y[i])) pts += fmt::format("{:.2f},{:.2f} ", px(i), py(series[k].y[i]));
        s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"/>\n", col, pts);
        s += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", left + pw + 10, top + 14 + 16 * k, col,
                         detail::escape(series[k].name));
    }
    s += "</svg>\n";
    return s;
}

}  // namespace aegis::report
