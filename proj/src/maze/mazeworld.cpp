#include "cogmap/maze/mazeworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cogmap/common/error.hpp"
#include "cogmap/common/rng.hpp"

namespace cogmap::maze {

namespace {

// 7x7 occupancy grid. Corridors: stem x=3 y=1..5, left loop around x=1..2,
// right loop around x=4..5, loops joined to the stem at top and bottom.
constexpr int kGrid = 7;

bool is_floor(int cx, int cy) {
    if (cx < 0 || cy < 0 || cx >= kGrid || cy >= kGrid) return false;
    if (cx == 3 && cy >= 1 && cy <= 5) return true;                 // stem
    if (cx == 1 && cy >= 1 && cy <= 5) return true;                 // left far side
    if (cx == 5 && cy >= 1 && cy <= 5) return true;                 // right far side
    if ((cx == 2 || cx == 4) && (cy == 1 || cy == 5)) return true;  // loop corners
    return false;
}

bool is_wall(int cx, int cy) { return !is_floor(cx, cy); }

struct Pt {
    double x, y;
};

// Track arc length: stem 0..4, loop 4..12, lap length 12 units.
constexpr double kLapUnits = 12.0;

Pt raw_point(double u, bool turn_left) {
    // u in [0, 12]
    const double sgn = turn_left ? -1.0 : 1.0;  // left loop lies at x < 3.5
    if (u <= 4.0) return {3.5, 1.5 + u};
    if (u <= 6.0) return {3.5 + sgn * (u - 4.0), 5.5};
    if (u <= 10.0) return {3.5 + sgn * 2.0, 5.5 - (u - 6.0)};
    return {3.5 + sgn * (2.0 - (u - 10.0)), 1.5};
}

Pt point_at(double u, bool cur, bool prev) {
    if (u < 0.0) return raw_point(u + kLapUnits, prev);
    if (u > kLapUnits) return raw_point(u - kLapUnits, cur);  // next-lap stem
    return raw_point(u, cur);
}

// Smooth heading: look a little ahead and behind along the track.
constexpr double kHeadingLookahead = 0.4;

Pose pose_at_full(double s, bool cur, bool prev) {
    Pt p = raw_point(s, cur);
    Pt ahead = point_at(s + kHeadingLookahead, cur, prev);
    Pt behind = point_at(s - kHeadingLookahead, cur, prev);
    Pose pose;
    pose.x = static_cast<float>(p.x);
    pose.y = static_cast<float>(p.y);
    pose.heading = static_cast<float>(std::atan2(ahead.y - behind.y, ahead.x - behind.x));
    return pose;
}

double frac(double v) { return v - std::floor(v); }

double hue_r(double x, double y) { return 0.60 + 0.40 * std::sin(1.3 * x + 0.5 * y); }
double hue_g(double x, double y) { return 0.60 + 0.40 * std::sin(0.9 * y - 0.7 * x + 2.1); }
double hue_b(double x, double y) { return 0.60 + 0.40 * std::sin(0.6 * x + 1.1 * y + 4.2); }

uint8_t to_u8(double v) {
    double x = 255.0 * v;
    if (x < 0.0) x = 0.0;
    if (x > 255.0) x = 255.0;
    return static_cast<uint8_t>(x + 0.5);
}

}  // namespace

Pose pose_at(double s, bool turn_left) { return pose_at_full(s, turn_left, turn_left); }

Image8 render_view(const Pose& pose, int64_t size) {
    const int64_t h = size, w = size;
    Image8 img = Image8::blank(h, w);
    const double px = pose.x, py = pose.y;
    const double dirx = std::cos(static_cast<double>(pose.heading));
    const double diry = std::sin(static_cast<double>(pose.heading));
    const double fov_half_tan = 0.7002075382097097;  // 70 degree field of view
    const double planex = -diry * fov_half_tan;
    const double planey = dirx * fov_half_tan;

    for (int64_t col = 0; col < w; ++col) {
        const double camx = 2.0 * (static_cast<double>(col) + 0.5) / static_cast<double>(w) - 1.0;
        const double rx = dirx + planex * camx;
        const double ry = diry + planey * camx;

        int mapx = static_cast<int>(std::floor(px));
        int mapy = static_cast<int>(std::floor(py));
        const double ddx = (rx == 0.0) ? 1e30 : std::abs(1.0 / rx);
        const double ddy = (ry == 0.0) ? 1e30 : std::abs(1.0 / ry);
        int stepx, stepy;
        double sidex, sidey;
        if (rx < 0) {
            stepx = -1;
            sidex = (px - mapx) * ddx;
        } else {
            stepx = 1;
            sidex = (mapx + 1.0 - px) * ddx;
        }
        if (ry < 0) {
            stepy = -1;
            sidey = (py - mapy) * ddy;
        } else {
            stepy = 1;
            sidey = (mapy + 1.0 - py) * ddy;
        }
        int side = 0;
        for (int iter = 0; iter < 64; ++iter) {
            if (sidex < sidey) {
                sidex += ddx;
                mapx += stepx;
                side = 0;
            } else {
                sidey += ddy;
                mapy += stepy;
                side = 1;
            }
            if (is_wall(mapx, mapy)) break;
        }
        const double dist =
            std::max(1e-6, side == 0 ? sidex - ddx : sidey - ddy);  // perpendicular distance
        const double line_h = static_cast<double>(h) / dist;
        const double wall_top = static_cast<double>(h) / 2.0 - line_h / 2.0;
        const int64_t draw_start = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(wall_top)));
        const int64_t draw_end =
            std::min<int64_t>(h - 1, static_cast<int64_t>(std::floor(wall_top + line_h)));

        // texture coordinate along the wall face and world hit point
        const double wx = px + dist * rx;
        const double wy = py + dist * ry;
        const double wall_u = frac(side == 0 ? wy : wx);
        const double fade = 1.0 / (1.0 + 0.10 * dist);
        const double shade = (side == 1) ? 0.85 : 1.0;
        const double hr = hue_r(wx, wy), hg = hue_g(wx, wy), hb = hue_b(wx, wy);

        for (int64_t y = 0; y < h; ++y) {
            uint8_t* px8 = img.row(y) + col * 3;
            if (y >= draw_start && y <= draw_end) {
                const double v = (static_cast<double>(y) + 0.5 - wall_top) / line_h;
                const int cu = static_cast<int>(std::floor(wall_u / 0.25));
                const int cv = static_cast<int>(std::floor(v / 0.25));
                const double checker = ((cu + cv) & 1) ? 0.95 : 0.55;
                px8[0] = to_u8(checker * hr * shade * fade);
                px8[1] = to_u8(checker * hg * shade * fade);
                px8[2] = to_u8(checker * hb * shade * fade);
            } else {
                const bool ceiling = y < h / 2;
                const double row_off =
                    ceiling ? (static_cast<double>(h) / 2.0 - 0.5 - static_cast<double>(y))
                            : (static_cast<double>(y) + 0.5 - static_cast<double>(h) / 2.0);
                const double row_dist = (static_cast<double>(h) / 2.0) / std::max(row_off, 1e-6);
                const double fx = px + rx * row_dist;
                const double fy = py + ry * row_dist;
                const int cu = static_cast<int>(std::floor(fx / 0.5));
                const int cv = static_cast<int>(std::floor(fy / 0.5));
                const double checker = ((cu + cv) & 1) ? 0.9 : 0.5;
                const double ffade = 1.0 / (1.0 + 0.10 * row_dist);
                const double base = ceiling ? 0.35 : 1.0;
                px8[0] = to_u8(base * checker * hue_r(fx, fy) * ffade);
                px8[1] = to_u8(base * checker * hue_g(fx, fy) * ffade);
                px8[2] = to_u8(base * checker * hue_b(fx, fy) * ffade);
            }
        }
    }
    return img;
}

Image8 MazeDataset::frame_image(int64_t i) const {
    require(i >= 0 && i < frame_count(), "frame_image: index ", i, " out of range");
    Image8 img = Image8::blank(height, width);
    std::memcpy(img.pixels.data(), frame(i), img.pixels.size());
    return img;
}

MazeDataset generate(const MazeConfig& config) {
    require(config.size == 16 || config.size == 32 || config.size == 64,
            "generate: size must be 16, 32 or 64, got ", config.size);
    require(config.frames >= kLapFrames, "generate: frame count ", config.frames,
            " too small for one full lap (", kLapFrames, " frames)");
    require(config.junction_probability >= 0.0 && config.junction_probability <= 1.0,
            "generate: junction probability out of [0,1]");

    const int64_t n = config.frames;
    const int64_t n_laps = (n + kLapFrames - 1) / kLapFrames + 1;
    Rng rng(config.seed);
    std::vector<bool> turn_left(static_cast<size_t>(n_laps));
    for (size_t i = 0; i < turn_left.size(); ++i)
        turn_left[i] = rng.bernoulli(config.junction_probability);

    MazeDataset ds;
    ds.height = config.size;
    ds.width = config.size;
    ds.seed = config.seed;
    ds.poses.resize(static_cast<size_t>(n));
    ds.labels.resize(static_cast<size_t>(n));
    ds.frames.resize(static_cast<size_t>(n * config.size * config.size * 3));

    for (int64_t t = 0; t < n; ++t) {
        const int64_t lap = t / kLapFrames;
        const int64_t t_in = t % kLapFrames;
        const double s_in = static_cast<double>(t_in) / static_cast<double>(kFramesPerUnit);
        const bool cur = turn_left[static_cast<size_t>(lap)];
        const bool prev = lap > 0 ? static_cast<bool>(turn_left[static_cast<size_t>(lap - 1)]) : cur;
        ds.poses[static_cast<size_t>(t)] = pose_at_full(s_in, cur, prev);
        ds.labels[static_cast<size_t>(t)] =
            t_in <= kStemFrames ? PathLabel::Stem : (cur ? PathLabel::Left : PathLabel::Right);
        if (t_in == kStemFrames && t + 1 < n) ds.junction_indices.push_back(t);
        Image8 img = render_view(ds.poses[static_cast<size_t>(t)], config.size);
        std::memcpy(ds.frames.data() + t * config.size * config.size * 3, img.pixels.data(),
                    img.pixels.size());
    }
    return ds;
}

namespace {

constexpr char kMagic[4] = {'C', 'G', 'D', 'S'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));  // x86 is little-endian
}

template <class T>
T take(const std::string& in, size_t& off) {
    require(off + sizeof(T) <= in.size(), "dataset file truncated at offset ", off);
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

void save(const MazeDataset& ds, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put<uint32_t>(out, kVersion);
    put<uint32_t>(out, static_cast<uint32_t>(ds.frame_count()));
    put<uint32_t>(out, static_cast<uint32_t>(ds.height));
    put<uint32_t>(out, static_cast<uint32_t>(ds.width));
    put<uint32_t>(out, 3);
    put<uint64_t>(out, ds.seed);
    for (int64_t i = 0; i < ds.frame_count(); ++i) {
        const Pose& p = ds.poses[static_cast<size_t>(i)];
        put<float>(out, p.x);
        put<float>(out, p.y);
        put<float>(out, p.heading);
        put<uint8_t>(out, static_cast<uint8_t>(ds.labels[static_cast<size_t>(i)]));
    }
    out.append(reinterpret_cast<const char*>(ds.frames.data()), ds.frames.size());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "save: cannot open ", path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    require(f.good(), "save: write failed for ", path);
}

MazeDataset load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "load: cannot open ", path);
    std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    require(in.size() >= 4 && std::memcmp(in.data(), kMagic, 4) == 0, "load: bad magic in ", path,
            " (want CGDS)");
    size_t off = 4;
    const uint32_t version = take<uint32_t>(in, off);
    require(version == kVersion, "load: unsupported dataset version ", version);
    const uint32_t n = take<uint32_t>(in, off);
    const uint32_t height = take<uint32_t>(in, off);
    const uint32_t width = take<uint32_t>(in, off);
    const uint32_t channels = take<uint32_t>(in, off);
    require(channels == 3, "load: want 3 channels, got ", channels);
    const uint64_t seed = take<uint64_t>(in, off);

    const size_t expect =
        off + static_cast<size_t>(n) * 13 + static_cast<size_t>(n) * height * width * 3;
    require(in.size() == expect, "load: header frame count ", n,
            " disagrees with payload length (file ", in.size(), " bytes, expected ", expect, ")");

    MazeDataset ds;
    ds.height = height;
    ds.width = width;
    ds.seed = seed;
    ds.poses.resize(n);
    ds.labels.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        ds.poses[i].x = take<float>(in, off);
        ds.poses[i].y = take<float>(in, off);
        ds.poses[i].heading = take<float>(in, off);
        const uint8_t lab = take<uint8_t>(in, off);
        require(lab <= 2, "load: bad path label ", static_cast<int>(lab), " at frame ", i);
        ds.labels[i] = static_cast<PathLabel>(lab);
        if (i % kLapFrames == kStemFrames && i + 1 < n) ds.junction_indices.push_back(i);
    }
    ds.frames.assign(in.begin() + static_cast<std::ptrdiff_t>(off), in.end());
    return ds;
}

PathSegments segments(const MazeDataset& ds) {
    const int64_t n = ds.frame_count();
    int64_t t_left = -1, len_left = 0;
    int64_t t_right = -1, len_right = 0;
    for (int64_t j : ds.junction_indices) {
        if (j + 1 >= n) continue;
        const PathLabel lab = ds.labels[static_cast<size_t>(j + 1)];
        int64_t len = 0;
        while (j + 1 + len < n && ds.labels[static_cast<size_t>(j + 1 + len)] == lab) ++len;
        if (lab == PathLabel::Left && t_left < 0) {
            t_left = j + 1;
            len_left = len;
        } else if (lab == PathLabel::Right && t_right < 0) {
            t_right = j + 1;
            len_right = len;
        }
    }
    require(t_left >= 0, "segments: dataset contains no left traversal");
    require(t_right >= 0, "segments: dataset contains no right traversal");
    PathSegments seg;
    seg.t_left = t_left;
    seg.t_right = t_right;
    seg.t_path = std::min(len_left, len_right) - 1;
    return seg;
}

}  // namespace cogmap::maze
