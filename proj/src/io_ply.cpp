#include "gsopt/io_ply.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "PLY reader/writer assume a little-endian host");

namespace gsopt {

namespace {

enum class PlyScalar { F32, F64, I8, U8, I16, U16, I32, U32 };

std::size_t scalar_size(PlyScalar t) {
    switch (t) {
    case PlyScalar::I8:
    case PlyScalar::U8:
        return 1;
    case PlyScalar::I16:
    case PlyScalar::U16:
        return 2;
    case PlyScalar::F32:
    case PlyScalar::I32:
    case PlyScalar::U32:
        return 4;
    case PlyScalar::F64:
        return 8;
    }
    return 0;
}

PlyScalar parse_scalar(const std::string& word) {
    if (word == "float" || word == "float32") return PlyScalar::F32;
    if (word == "double" || word == "float64") return PlyScalar::F64;
    if (word == "char" || word == "int8") return PlyScalar::I8;
    if (word == "uchar" || word == "uint8") return PlyScalar::U8;
    if (word == "short" || word == "int16") return PlyScalar::I16;
    if (word == "ushort" || word == "uint16") return PlyScalar::U16;
    if (word == "int" || word == "int32") return PlyScalar::I32;
    if (word == "uint" || word == "uint32") return PlyScalar::U32;
    throw IoError("ply: unsupported property type '" + word + "'");
}

struct PlyProperty {
    std::string name;
    PlyScalar type = PlyScalar::F32;
};

struct PlyHeader {
    bool binary = true;
    std::size_t vertex_count = 0;
    std::vector<PlyProperty> properties;
    std::size_t payload_offset = 0;
};

PlyHeader read_header(std::istream& in, const std::string& path) {
    PlyHeader header;
    std::string line;
    if (!std::getline(in, line) || (line != "ply" && line != "ply\r"))
        throw IoError("ply: '" + path + "' does not start with a ply magic line");
    bool in_vertex_element = false;
    bool saw_format = false;
    std::size_t offset = line.size() + 1;
    while (std::getline(in, line)) {
        offset += line.size() + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment" || word.empty()) continue;
        if (word == "format") {
            std::string fmt, version;
            ls >> fmt >> version;
            if (fmt == "binary_little_endian")
                header.binary = true;
            else if (fmt == "ascii")
                header.binary = false;
            else
                throw IoError("ply: unsupported format '" + fmt + "' in '" + path + "'");
            saw_format = true;
        } else if (word == "element") {
            std::string name;
            std::size_t count = 0;
            ls >> name >> count;
            if (name == "vertex") {
                header.vertex_count = count;
                in_vertex_element = true;
            } else {
                in_vertex_element = false;
                if (count != 0)
                    throw IoError("ply: '" + path + "' has an unsupported non-empty element '" +
                                  name + "'");
            }
        } else if (word == "property") {
            std::string type;
            ls >> type;
            if (type == "list") throw IoError("ply: list properties are not supported");
            PlyProperty p;
            p.type = parse_scalar(type);
            ls >> p.name;
            if (in_vertex_element) header.properties.push_back(p);
        } else if (word == "end_header") {
            require(saw_format, "ply: missing format line in '" + path + "'");
            header.payload_offset = offset;
            return header;
        }
    }
    throw IoError("ply: missing end_header in '" + path + "'");
}

/// Column-indexed rows of the vertex element, everything widened to double.
struct PlyTable {
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;

    std::size_t column(const std::string& name, const std::string& path) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw IoError("ply: '" + path + "' is missing property '" + name + "'");
    }
};

double decode_scalar(const unsigned char* bytes, PlyScalar type) {
    switch (type) {
    case PlyScalar::F32: {
        float v;
        std::memcpy(&v, bytes, 4);
        return v;
    }
    case PlyScalar::F64: {
        double v;
        std::memcpy(&v, bytes, 8);
        return v;
    }
    case PlyScalar::I8:
        return *reinterpret_cast<const signed char*>(bytes);
    case PlyScalar::U8:
        return *bytes;
    case PlyScalar::I16: {
        std::int16_t v;
        std::memcpy(&v, bytes, 2);
        return v;
    }
    case PlyScalar::U16: {
        std::uint16_t v;
        std::memcpy(&v, bytes, 2);
        return v;
    }
    case PlyScalar::I32: {
        std::int32_t v;
        std::memcpy(&v, bytes, 4);
        return v;
    }
    case PlyScalar::U32: {
        std::uint32_t v;
        std::memcpy(&v, bytes, 4);
        return v;
    }
    }
    return 0.0;
}

PlyTable read_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("ply: cannot open '" + path + "'");
    const PlyHeader header = read_header(in, path);
    PlyTable table;
    table.names.reserve(header.properties.size());
    for (const PlyProperty& p : header.properties) table.names.push_back(p.name);
    table.columns.assign(header.properties.size(),
                         std::vector<double>(header.vertex_count, 0.0));
    if (header.binary) {
        std::size_t row_size = 0;
        for (const PlyProperty& p : header.properties) row_size += scalar_size(p.type);
        std::vector<unsigned char> row(row_size);
        std::size_t offset = header.payload_offset;
        for (std::size_t v = 0; v < header.vertex_count; ++v) {
            in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row_size));
            if (static_cast<std::size_t>(in.gcount()) != row_size)
                throw IoError("ply: '" + path + "' truncated at byte " +
                              std::to_string(offset + static_cast<std::size_t>(in.gcount())) +
                              " while reading vertex " + std::to_string(v));
            std::size_t at = 0;
            for (std::size_t c = 0; c < header.properties.size(); ++c) {
                table.columns[c][v] = decode_scalar(row.data() + at, header.properties[c].type);
                at += scalar_size(header.properties[c].type);
            }
            offset += row_size;
        }
    } else {
        for (std::size_t v = 0; v < header.vertex_count; ++v) {
            for (std::size_t c = 0; c < header.properties.size(); ++c) {
                if (!(in >> table.columns[c][v]))
                    throw IoError("ply: '" + path + "' truncated while reading vertex " +
                                  std::to_string(v));
            }
        }
    }
    return table;
}

void append_f32(std::string& out, double v) {
    const float f = static_cast<float>(v);
    char bytes[4];
    std::memcpy(bytes, &f, 4);
    out.append(bytes, 4);
}

void append_i32(std::string& out, int v) {
    const std::int32_t i = v;
    char bytes[4];
    std::memcpy(bytes, &i, 4);
    out.append(bytes, 4);
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("ply: cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("ply: short write to '" + path + "'");
}

constexpr const char* kGaussianProps[] = {"x",       "y",       "z",      "rot_0",  "rot_1",
                                          "rot_2",   "rot_3",   "scale_0", "scale_1", "scale_2",
                                          "opacity", "f_dc_0",  "f_dc_1",  "f_dc_2"};

constexpr const char* kBoundFloatProps[] = {"bary_0",    "bary_1",  "bary_2", "rot_re",
                                            "rot_im",    "scale_0", "scale_1", "thickness",
                                            "opacity",   "f_dc_0",  "f_dc_1",  "f_dc_2"};

} // namespace

void write_gaussian_ply(const std::string& path, const GaussianCloud& cloud) {
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n";
    for (const char* name : kGaussianProps) header << "property float " << name << "\n";
    header << "end_header\n";
    std::string bytes = header.str();
    bytes.reserve(bytes.size() + cloud.size() * 14 * 4);
    for (std::size_t g = 0; g < cloud.size(); ++g) {
        for (int k = 0; k < 3; ++k) append_f32(bytes, cloud.centers[g][k]);
        for (int k = 0; k < 4; ++k) append_f32(bytes, cloud.rotations[g][k]);
        for (int k = 0; k < 3; ++k) append_f32(bytes, cloud.log_scales[g][k]);
        append_f32(bytes, cloud.opacity_logits[g]);
        for (int k = 0; k < 3; ++k) append_f32(bytes, cloud.colors[g][k]);
    }
    write_file(path, bytes);
}

GaussianCloud read_gaussian_ply(const std::string& path) {
    const PlyTable table = read_table(path);
    std::size_t cols[14];
    for (int i = 0; i < 14; ++i) cols[i] = table.column(kGaussianProps[i], path);
    const std::size_t n = table.columns.empty() ? 0 : table.columns[0].size();
    GaussianCloud cloud;
    cloud.reserve(n);
    for (std::size_t v = 0; v < n; ++v) {
        Gaussian3D g;
        for (int k = 0; k < 3; ++k) g.center[k] = table.columns[cols[k]][v];
        for (int k = 0; k < 4; ++k) g.rotation[k] = table.columns[cols[3 + k]][v];
        for (int k = 0; k < 3; ++k) g.log_scale[k] = table.columns[cols[7 + k]][v];
        g.opacity_logit = table.columns[cols[10]][v];
        for (int k = 0; k < 3; ++k) g.color[k] = table.columns[cols[11 + k]][v];
        cloud.push_back(g);
    }
    cloud.validate();
    return cloud;
}

std::vector<Vec3> read_ply_positions(const std::string& path) {
    const PlyTable table = read_table(path);
    const std::size_t cx = table.column("x", path);
    const std::size_t cy = table.column("y", path);
    const std::size_t cz = table.column("z", path);
    const std::size_t n = table.columns[cx].size();
    std::vector<Vec3> out(n);
    for (std::size_t v = 0; v < n; ++v)
        out[v] = Vec3(table.columns[cx][v], table.columns[cy][v], table.columns[cz][v]);
    return out;
}

void write_bound_ply(const std::string& path, const BoundGaussianCloud& cloud) {
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n";
    header << "property int face\n";
    for (const char* name : kBoundFloatProps) header << "property float " << name << "\n";
    header << "end_header\n";
    std::string bytes = header.str();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        append_i32(bytes, cloud.faces[i]);
        for (int k = 0; k < 3; ++k) append_f32(bytes, cloud.barys[i][k]);
        for (int k = 0; k < 2; ++k) append_f32(bytes, cloud.rots[i][k]);
        for (int k = 0; k < 2; ++k) append_f32(bytes, cloud.log_scales_2d[i][k]);
        append_f32(bytes, cloud.thickness_logits[i]);
        append_f32(bytes, cloud.opacity_logits[i]);
        for (int k = 0; k < 3; ++k) append_f32(bytes, cloud.colors[i][k]);
    }
    write_file(path, bytes);
}

BoundGaussianCloud read_bound_ply(const std::string& path, const TriMesh& mesh) {
    const PlyTable table = read_table(path);
    const std::size_t cface = table.column("face", path);
    std::size_t cols[12];
    for (int i = 0; i < 12; ++i) cols[i] = table.column(kBoundFloatProps[i], path);
    const std::size_t n = table.columns[cface].size();
    BoundGaussianCloud cloud;
    cloud.mesh = mesh;
    for (std::size_t v = 0; v < n; ++v) {
        cloud.faces.push_back(static_cast<int>(table.columns[cface][v]));
        cloud.barys.push_back(Vec3(table.columns[cols[0]][v], table.columns[cols[1]][v],
                                   table.columns[cols[2]][v]));
        cloud.rots.push_back(Vec2(table.columns[cols[3]][v], table.columns[cols[4]][v]));
        cloud.log_scales_2d.push_back(
            Vec2(table.columns[cols[5]][v], table.columns[cols[6]][v]));
        cloud.thickness_logits.push_back(table.columns[cols[7]][v]);
        cloud.opacity_logits.push_back(table.columns[cols[8]][v]);
        cloud.colors.push_back(Vec3(table.columns[cols[9]][v], table.columns[cols[10]][v],
                                    table.columns[cols[11]][v]));
    }
    cloud.zero_grad();
    cloud.validate();
    return cloud;
}

} // namespace gsopt
