#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "sar3d/common.hpp"

namespace sar3d {

// Ray math runs in double; the per-ray Plucker moment must survive origin
// offsets of +-10 units to well below 1e-12.

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        double n = norm();
        return {x / n, y / n, z / n};
    }
};

// Row-major 3x3, camera-to-world.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Vec3 row(int i) const { return {m[i * 3 + 0], m[i * 3 + 1], m[i * 3 + 2]}; }
    Vec3 col(int j) const { return {m[j], m[3 + j], m[6 + j]}; }
};

// Camera convention: +z forward, +x right, +y down in pixel space, principal
// point at the image center, square pixels sized by the vertical FOV.
struct CameraPose {
    Vec3 origin;
    Mat3 rotation;  // camera-to-world
    double fov_y = 0.8517;
    int height = 0;
    int width = 0;
};

inline bool is_orthonormal(const Mat3& r, double tol = 1e-6) {
    for (int i = 0; i < 3; ++i) {
        for (int j = i; j < 3; ++j) {
            double d = r.col(i).dot(r.col(j));
            double want = (i == j) ? 1.0 : 0.0;
            if (std::abs(d - want) > tol) return false;
        }
    }
    return true;
}

inline void validate_pose(const CameraPose& pose) {
    if (!is_orthonormal(pose.rotation)) {
        throw InvalidPose("camera rotation is not orthonormal");
    }
    if (!(pose.fov_y > 0.0 && pose.fov_y < 3.14159265358979323846)) {
        throw InvalidPose("fov_y out of (0, pi)");
    }
    if (pose.height < 1 || pose.width < 1) {
        throw InvalidPose("image size must be >= 1");
    }
}

struct Ray {
    Vec3 origin;
    Vec3 direction;  // unit norm
};

// One unit-norm ray per pixel, row-major. Focal length in pixels derives from
// fov_y; pixel centers sit at (x + 0.5, y + 0.5).
inline std::vector<Ray> generate_rays(const CameraPose& pose) {
    validate_pose(pose);
    const double focal = pose.height / (2.0 * std::tan(pose.fov_y / 2.0));
    std::vector<Ray> rays;
    rays.reserve(static_cast<size_t>(pose.height) * pose.width);
    for (int y = 0; y < pose.height; ++y) {
        for (int x = 0; x < pose.width; ++x) {
            Vec3 dir_cam{(x + 0.5 - pose.width / 2.0) / focal,
                         (y + 0.5 - pose.height / 2.0) / focal, 1.0};
            Vec3 dir_world = (pose.rotation * dir_cam).normalized();
            rays.push_back({pose.origin, dir_world});
        }
    }
    return rays;
}

// p = (o x d, d). The moment o x d is invariant to sliding o along the ray.
inline std::array<double, 6> plucker_embed(const Vec3& origin, const Vec3& direction) {
    double n = direction.norm();
    if (std::abs(n - 1.0) > 1e-6) {
        throw DegenerateRay("plucker_embed requires a unit direction");
    }
    Vec3 m = origin.cross(direction);
    return {m.x, m.y, m.z, direction.x, direction.y, direction.z};
}

struct ViewBundle {
    std::vector<Grid> views;  // each h x w x 10: [rgb, depth, plucker]
    std::vector<CameraPose> poses;
};

constexpr int kViewChannels = 10;

// Channel layout [rgb(3), depth(1), plucker(6)].
inline Grid assemble_view_tensor(const Grid& image, const Grid& depth, const CameraPose& pose) {
    if (image.c != 3) throw ShapeError("assemble_view_tensor: image must have 3 channels");
    if (depth.c != 1) throw ShapeError("assemble_view_tensor: depth must have 1 channel");
    if (image.h != depth.h || image.w != depth.w) {
        throw ShapeError("assemble_view_tensor: image/depth size mismatch");
    }
    if (image.h != pose.height || image.w != pose.width) {
        throw ShapeError("assemble_view_tensor: pose size mismatch");
    }
    for (float v : image.data) {
        if (!(v >= 0.0f && v <= 1.0f)) throw RangeError("assemble_view_tensor: rgb outside [0,1]");
    }
    for (float v : depth.data) {
        if (!(v >= 0.0f)) throw RangeError("assemble_view_tensor: negative depth");
    }

    std::vector<Ray> rays = generate_rays(pose);
    Grid out(image.h, image.w, kViewChannels);
    for (int y = 0; y < image.h; ++y) {
        for (int x = 0; x < image.w; ++x) {
            float* px = out.pixel(y, x);
            px[0] = image.at(y, x, 0);
            px[1] = image.at(y, x, 1);
            px[2] = image.at(y, x, 2);
            px[3] = depth.at(y, x, 0);
            const Ray& r = rays[static_cast<size_t>(y) * image.w + x];
            auto p = plucker_embed(r.origin, r.direction);
            for (int k = 0; k < 6; ++k) px[4 + k] = static_cast<float>(p[k]);
        }
    }
    return out;
}

}  // namespace sar3d
