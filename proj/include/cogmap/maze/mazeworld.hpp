#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cogmap/common/image.hpp"

// First-person walk through a figure-8 corridor: two square loops joined by
// a central stem with one junction where the agent turns left or right.
// Rendering is a per-column raycast over a 2-D occupancy grid with
// procedurally textured walls and floor; the texture hue varies with world
// position so distinct poses produce distinct images.

namespace cogmap::maze {

enum class PathLabel : uint8_t { Stem = 0, Left = 1, Right = 2 };

struct Pose {
    float x = 0;
    float y = 0;
    float heading = 0;  // radians
};

struct MazeConfig {
    int64_t size = 64;  // 16, 32 or 64
    int64_t frames = 480;
    uint64_t seed = 1;
    double junction_probability = 0.5;  // probability of turning left
};

// Fixed by the corridor geometry and pacing: 20 frames per maze unit,
// 4-unit stem plus 8-unit loop, so a lap is 240 frames and the junction is
// met at frames 80, 320, ...
constexpr int64_t kFramesPerUnit = 20;
constexpr int64_t kStemFrames = 80;
constexpr int64_t kLapFrames = 240;

struct MazeDataset {
    int64_t height = 0;
    int64_t width = 0;
    uint64_t seed = 0;
    std::vector<uint8_t> frames;  // n * h * w * 3, row-major RGB
    std::vector<Pose> poses;
    std::vector<PathLabel> labels;
    std::vector<int64_t> junction_indices;

    int64_t frame_count() const { return static_cast<int64_t>(poses.size()); }
    const uint8_t* frame(int64_t i) const { return frames.data() + i * height * width * 3; }
    Image8 frame_image(int64_t i) const;
};

// One aligned left/right loop traversal. t_path is the inclusive offset
// bound: frames t_left + dt and t_right + dt for dt in [0, t_path] lie on
// the loops, never on the stem.
struct PathSegments {
    int64_t t_left = 0;
    int64_t t_right = 0;
    int64_t t_path = 0;
};

MazeDataset generate(const MazeConfig& config);
void save(const MazeDataset& ds, const std::string& path);
MazeDataset load(const std::string& path);
PathSegments segments(const MazeDataset& ds);

// Pure renderer: frame = f(pose, size) only.
Image8 render_view(const Pose& pose, int64_t size);

// Camera pose at arc position s (maze units along the track) given the
// branch decision of the lap containing s.
Pose pose_at(double s, bool turn_left);

}  // namespace cogmap::maze
