#include "gsopt/io_archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "archive reader/writer assume a little-endian host");

namespace gsopt {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (static_cast<std::size_t>(in.gcount()) != sizeof(T))
        throw IoError("archive: '" + path + "' truncated");
    return v;
}

} // namespace

void TensorArchive::put(const std::string& name, const std::vector<double>& values) {
    require(!name.empty() && name.size() < 65536, "archive: bad tensor name");
    if (tensors_.find(name) == tensors_.end()) order_.push_back(name);
    tensors_[name] = values;
}

const std::vector<double>& TensorArchive::get(const std::string& name) const {
    const auto it = tensors_.find(name);
    if (it == tensors_.end()) throw IoError("archive: missing tensor '" + name + "'");
    return it->second;
}

bool TensorArchive::contains(const std::string& name) const {
    return tensors_.find(name) != tensors_.end();
}

std::vector<std::string> TensorArchive::names() const { return order_; }

void TensorArchive::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("archive: cannot open '" + path + "' for writing");
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(order_.size()));
    for (const std::string& name : order_) {
        const std::vector<double>& values = tensors_.at(name);
        write_pod(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<std::uint64_t>(values.size()));
        for (double v : values) write_pod(out, static_cast<float>(v));
    }
    if (!out) throw IoError("archive: short write to '" + path + "'");
}

TensorArchive TensorArchive::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("archive: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("archive: '" + path + "' has a bad magic header");
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion)
        throw IoError("archive: '" + path + "' has unsupported version " +
                      std::to_string(version));
    const auto count = read_pod<std::uint32_t>(in, path);
    TensorArchive archive;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint16_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (static_cast<std::size_t>(in.gcount()) != name_len)
            throw IoError("archive: '" + path + "' truncated in a tensor name");
        const auto n = read_pod<std::uint64_t>(in, path);
        std::vector<double> values(n);
        for (std::uint64_t k = 0; k < n; ++k)
            values[k] = read_pod<float>(in, path);
        archive.put(name, values);
    }
    return archive;
}

void save_params(const std::string& path, const std::vector<ParamRef>& params) {
    TensorArchive archive;
    for (const ParamRef& p : params) archive.put(p.name, *p.value);
    archive.save(path);
}

void load_params(const std::string& path, const std::vector<ParamRef>& params) {
    const TensorArchive archive = TensorArchive::load(path);
    for (const ParamRef& p : params) {
        const std::vector<double>& stored = archive.get(p.name);
        require(stored.size() == p.value->size(),
                "archive: tensor '" + p.name + "' has size " + std::to_string(stored.size()) +
                    ", expected " + std::to_string(p.value->size()));
        *p.value = stored;
    }
}

} // namespace gsopt
