#pragma once
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "geometry.hpp"
#include "rng.hpp"
#include "sparse_grid.hpp"

namespace slat {

// Evaluation-protocol defaults: cameras on a radius-2 sphere looking at the
// origin with a 40 degree vertical field of view.
inline constexpr double kProtocolCameraRadius = 2.0;
inline constexpr double kProtocolFovDeg = 40.0;
inline constexpr int kDefaultEncodingViews = 150;

struct Camera {
    Vec3 position{0.0, 0.0, 2.0};
    Vec3 target{0.0, 0.0, 0.0};
    Vec3 up{0.0, 1.0, 0.0};
    double fov_y_deg = kProtocolFovDeg;
    int width = 512;
    int height = 512;

    void validate() const {
        if (norm(position - target) == 0.0) throw std::invalid_argument("camera: position == target");
        if (!(fov_y_deg > 0.0 && fov_y_deg < 180.0))
            throw std::invalid_argument("camera: fov out of (0, 180)");
        if (width < 1 || height < 1) throw std::invalid_argument("camera: degenerate image size");
    }
};

// Orthonormal camera frame; view direction is +forward, v grows downward.
struct CameraFrame {
    Vec3 right, up, forward;
    Vec3 position;
    double focal = 0.0;  // pixels
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
};

inline CameraFrame make_frame(const Camera& cam) {
    cam.validate();
    CameraFrame f;
    f.position = cam.position;
    f.forward = normalized(cam.target - cam.position);
    Vec3 up_hint = normalized(cam.up);
    if (std::abs(dot(f.forward, up_hint)) > 0.999) up_hint = Vec3{1.0, 0.0, 0.0};
    f.right = normalized(cross(f.forward, up_hint));
    f.up = cross(f.right, f.forward);
    f.width = cam.width;
    f.height = cam.height;
    const double tan_half = std::tan(cam.fov_y_deg * 3.14159265358979323846 / 360.0);
    f.focal = 0.5 * cam.height / tan_half;
    f.cx = 0.5 * cam.width;
    f.cy = 0.5 * cam.height;
    return f;
}

struct Projection {
    double u = 0.0, v = 0.0;  // continuous pixel coordinates
    double depth = 0.0;       // distance along the view axis
    bool visible = false;
};

inline Projection project(const Vec3& point, const CameraFrame& f) {
    const Vec3 d = point - f.position;
    Projection p;
    p.depth = dot(d, f.forward);
    if (p.depth <= 0.0) return p;
    const double xv = dot(d, f.right);
    const double yv = dot(d, f.up);
    p.u = f.cx + f.focal * xv / p.depth;
    p.v = f.cy - f.focal * yv / p.depth;
    p.visible = p.u >= 0.0 && p.u < f.width && p.v >= 0.0 && p.v < f.height;
    return p;
}

inline Projection project(const Vec3& point, const Camera& cam) {
    return project(point, make_frame(cam));
}

inline Vec3 unproject(double u, double v, double depth, const CameraFrame& f) {
    const double xv = (u - f.cx) / f.focal * depth;
    const double yv = -(v - f.cy) / f.focal * depth;
    return f.position + f.forward * depth + f.right * xv + f.up * yv;
}

// Area-uniform points on the sphere: z ~ U(-1,1), azimuth ~ U(0,2pi).
inline std::vector<Camera> sample_sphere_cameras(int n, double radius, double fov_deg,
                                                 std::uint64_t seed, int width = 512,
                                                 int height = 512) {
    if (n < 1) throw std::invalid_argument("sample_sphere_cameras: n must be >= 1");
    if (radius <= 0.0) throw std::invalid_argument("sample_sphere_cameras: radius must be > 0");
    Rng rng(seed);
    std::vector<Camera> cams;
    cams.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double z = rng.uniform(-1.0, 1.0);
        const double az = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        Camera c;
        c.position = Vec3{r * std::cos(az), r * std::sin(az), z} * radius;
        c.target = Vec3{0.0, 0.0, 0.0};
        c.up = Vec3{0.0, 0.0, 1.0};
        c.fov_y_deg = fov_deg;
        c.width = width;
        c.height = height;
        cams.push_back(c);
    }
    return cams;
}

// Center of voxel p in the normalized (-0.5, 0.5)^3 object cube.
inline Vec3 voxel_center(const VoxelCoord& p, int resolution) {
    return {(p.x + 0.5) / resolution - 0.5,
            (p.y + 0.5) / resolution - 0.5,
            (p.z + 0.5) / resolution - 0.5};
}

inline nlohmann::json camera_to_json(const Camera& c) {
    return nlohmann::json{{"position", {c.position.x, c.position.y, c.position.z}},
                          {"target", {c.target.x, c.target.y, c.target.z}},
                          {"up", {c.up.x, c.up.y, c.up.z}},
                          {"fov_y_deg", c.fov_y_deg},
                          {"width", c.width},
                          {"height", c.height}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
    Camera c;
    const auto vec = [&](const char* key) {
        const auto& a = j.at(key);
        return Vec3{a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
    };
    c.position = vec("position");
    c.target = vec("target");
    c.up = vec("up");
    c.fov_y_deg = j.at("fov_y_deg").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.validate();
    return c;
}

inline void save_camera_json(const std::string& path, const Camera& c) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("camera: cannot open for write: " + path);
    os << camera_to_json(c).dump(2) << "\n";
}

inline Camera load_camera_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("camera: cannot open: " + path);
    nlohmann::json j;
    is >> j;
    return camera_from_json(j);
}

}  // namespace slat
