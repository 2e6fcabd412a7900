#include "gsopt/io_obj.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace gsopt {

namespace {

/// float32 value printed with 9 significant digits, which parses back to the
/// identical float32.
void append_f32(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(static_cast<float>(v)));
    out += buf;
}

} // namespace

void write_obj(const std::string& path, const TriMesh& mesh) {
    mesh.validate();
    std::string out;
    out.reserve(mesh.vertex_count() * 48 + mesh.face_count() * 16);
    const bool with_colors = !mesh.colors.empty();
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        out += "v";
        for (int k = 0; k < 3; ++k) {
            out += ' ';
            append_f32(out, mesh.vertices[v][k]);
        }
        if (with_colors) {
            for (int k = 0; k < 3; ++k) {
                out += ' ';
                append_f32(out, mesh.colors[v][k]);
            }
        }
        out += '\n';
    }
    for (const Eigen::Vector3i& f : mesh.faces) {
        out += "f " + std::to_string(f[0] + 1) + " " + std::to_string(f[1] + 1) + " " +
               std::to_string(f[2] + 1) + "\n";
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("obj: cannot open '" + path + "' for writing");
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("obj: short write to '" + path + "'");
}

TriMesh read_obj(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw IoError("obj: cannot open '" + path + "'");
    TriMesh mesh;
    std::string line;
    int line_no = 0;
    bool any_color = false;
    while (std::getline(file, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            // Values quantize through float32 so a write/read cycle is exact.
            Vec3 p;
            if (!(ls >> p[0] >> p[1] >> p[2]))
                throw IoError("obj: '" + path + "' line " + std::to_string(line_no) +
                              ": malformed vertex");
            for (int k = 0; k < 3; ++k) p[k] = double(float(p[k]));
            Vec3 c;
            if (ls >> c[0] >> c[1] >> c[2]) {
                any_color = true;
                for (int k = 0; k < 3; ++k) c[k] = double(float(c[k]));
                mesh.colors.resize(mesh.vertices.size(), Vec3::Constant(0.5));
                mesh.colors.push_back(c);
            } else if (any_color) {
                mesh.colors.push_back(Vec3::Constant(0.5));
            }
            mesh.vertices.push_back(p);
        } else if (tag == "f") {
            int idx[3];
            for (int k = 0; k < 3; ++k) {
                std::string corner;
                if (!(ls >> corner))
                    throw IoError("obj: '" + path + "' line " + std::to_string(line_no) +
                                  ": face needs three corners");
                // Accept 'i', 'i/t', 'i/t/n', 'i//n' forms; only the vertex
                // index is used.
                idx[k] = std::stoi(corner.substr(0, corner.find('/')));
                require(idx[k] >= 1, "obj: face indices must be positive");
            }
            std::string extra;
            if (ls >> extra)
                throw IoError("obj: '" + path + "' line " + std::to_string(line_no) +
                              ": only triangles are supported");
            mesh.faces.emplace_back(idx[0] - 1, idx[1] - 1, idx[2] - 1);
        }
    }
    if (any_color) mesh.colors.resize(mesh.vertices.size(), Vec3::Constant(0.5));
    mesh.validate();
    return mesh;
}

} // namespace gsopt
