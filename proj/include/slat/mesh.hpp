#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "tensor.hpp"

namespace slat {

struct MeshVertex {
    Vec3 position;
    Vec3 normal;  // interpolated attribute normal
    Vec3 color;   // rgb in [0,1]
};

struct Triangle {
    std::uint32_t a = 0, b = 0, c = 0;
};

struct TriMesh {
    std::vector<MeshVertex> vertices;
    std::vector<Triangle> triangles;

    bool empty() const { return triangles.empty(); }

    Vec3 face_normal(std::size_t t) const {
        const Vec3& p0 = vertices[triangles[t].a].position;
        const Vec3& p1 = vertices[triangles[t].b].position;
        const Vec3& p2 = vertices[triangles[t].c].position;
        const Vec3 n = cross(p1 - p0, p2 - p0);
        const double len = norm(n);
        return len > 0.0 ? n / len : Vec3{0.0, 0.0, 0.0};
    }

    double face_area(std::size_t t) const {
        const Vec3& p0 = vertices[triangles[t].a].position;
        const Vec3& p1 = vertices[triangles[t].b].position;
        const Vec3& p2 = vertices[triangles[t].c].position;
        return 0.5 * norm(cross(p1 - p0, p2 - p0));
    }

    void validate() const {
        for (const Triangle& t : triangles)
            if (t.a >= vertices.size() || t.b >= vertices.size() || t.c >= vertices.size())
                throw std::invalid_argument("mesh: triangle index out of range");
    }

    // Drops index-degenerate and zero-area triangles.
    void cleanup(double min_area = 1e-14) {
        validate();
        std::vector<Triangle> kept;
        kept.reserve(triangles.size());
        for (std::size_t i = 0; i < triangles.size(); ++i) {
            const Triangle& t = triangles[i];
            if (t.a == t.b || t.b == t.c || t.a == t.c) continue;
            if (face_area(i) <= min_area) continue;
            kept.push_back(t);
        }
        triangles = std::move(kept);
    }
};

// Undirected edge -> incident triangle count; a closed surface has 2 everywhere.
inline std::map<std::pair<std::uint32_t, std::uint32_t>, int> edge_use_counts(const TriMesh& m) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> counts;
    const auto add = [&](std::uint32_t a, std::uint32_t b) {
        if (a > b) std::swap(a, b);
        ++counts[{a, b}];
    };
    for (const Triangle& t : m.triangles) {
        add(t.a, t.b);
        add(t.b, t.c);
        add(t.c, t.a);
    }
    return counts;
}

inline long euler_characteristic(const TriMesh& m) {
    std::vector<std::uint8_t> used(m.vertices.size(), 0);
    for (const Triangle& t : m.triangles) used[t.a] = used[t.b] = used[t.c] = 1;
    long v = 0;
    for (std::uint8_t u : used) v += u;
    const long e = static_cast<long>(edge_use_counts(m).size());
    const long f = static_cast<long>(m.triangles.size());
    return v - e + f;
}

// ---------------------------------------------------------------------------
// OBJ (positions + normals)

inline void save_obj(const std::string& path, const TriMesh& mesh) {
    std::ofstream os(path);
    if (!os) throw InputError("obj: cannot open for write: " + path);
    os.precision(9);
    for (const MeshVertex& v : mesh.vertices)
        os << "v " << v.position.x << " " << v.position.y << " " << v.position.z << "\n";
    for (const MeshVertex& v : mesh.vertices)
        os << "vn " << v.normal.x << " " << v.normal.y << " " << v.normal.z << "\n";
    for (const Triangle& t : mesh.triangles)
        os << "f " << t.a + 1 << "//" << t.a + 1 << " " << t.b + 1 << "//" << t.b + 1 << " "
           << t.c + 1 << "//" << t.c + 1 << "\n";
}

inline TriMesh load_obj(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("obj: cannot open: " + path);
    TriMesh mesh;
    std::vector<Vec3> normals;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            MeshVertex v;
            ss >> v.position.x >> v.position.y >> v.position.z;
            mesh.vertices.push_back(v);
        } else if (tag == "vn") {
            Vec3 n;
            ss >> n.x >> n.y >> n.z;
            normals.push_back(n);
        } else if (tag == "f") {
            std::vector<std::uint32_t> idx;
            std::string tok;
            while (ss >> tok) {
                const std::size_t slash = tok.find('/');
                const long i = std::stol(tok.substr(0, slash));
                if (i == 0) throw InputError("obj: zero face index in " + path);
                idx.push_back(static_cast<std::uint32_t>(
                    i > 0 ? i - 1 : static_cast<long>(mesh.vertices.size()) + i));
            }
            for (std::size_t k = 2; k < idx.size(); ++k)  // fan triangulation
                mesh.triangles.push_back({idx[0], idx[k - 1], idx[k]});
        }
    }
    for (std::size_t i = 0; i < normals.size() && i < mesh.vertices.size(); ++i)
        mesh.vertices[i].normal = normals[i];
    mesh.validate();
    return mesh;
}

// ---------------------------------------------------------------------------
// Binary little-endian PLY with vertex colors

inline void save_mesh_ply(const std::string& path, const TriMesh& mesh) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("ply: cannot open for write: " + path);
    os << "ply\nformat binary_little_endian 1.0\n";
    os << "element vertex " << mesh.vertices.size() << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    os << "property float nx\nproperty float ny\nproperty float nz\n";
    os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    os << "element face " << mesh.triangles.size() << "\n";
    os << "property list uchar int vertex_indices\n";
    os << "end_header\n";
    const auto byte = [](double c) {
        return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
    };
    for (const MeshVertex& v : mesh.vertices) {
        for (const double d : {v.position.x, v.position.y, v.position.z, v.normal.x, v.normal.y,
                               v.normal.z})
            detail::write_le<float>(os, static_cast<float>(d));
        for (const double c : {v.color.x, v.color.y, v.color.z})
            detail::write_le<std::uint8_t>(os, byte(c));
    }
    for (const Triangle& t : mesh.triangles) {
        detail::write_le<std::uint8_t>(os, 3);
        detail::write_le<std::int32_t>(os, static_cast<std::int32_t>(t.a));
        detail::write_le<std::int32_t>(os, static_cast<std::int32_t>(t.b));
        detail::write_le<std::int32_t>(os, static_cast<std::int32_t>(t.c));
    }
    if (!os) throw InputError("ply: write failed: " + path);
}

}  // namespace slat
