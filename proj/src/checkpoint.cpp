#include "clipnet/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace clipnet {

namespace {

constexpr char kMagic[7] = {'C', 'L', 'P', 'N', 'E', 'T', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct Reader {
    std::string buf;
    std::size_t pos = 0;
    const std::string& path;

    explicit Reader(const std::string& p) : path(p) {}

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw DataError("checkpoint " + path + ": truncated at byte " + std::to_string(pos));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, ckpt.format_version);
    put_u64(out, ckpt.iteration);
    put_u64(out, ckpt.config_digest);
    put_u32(out, static_cast<std::uint32_t>(ckpt.rng_state.size()));
    out.append(ckpt.rng_state);
    put_u64(out, static_cast<std::uint64_t>(ckpt.entries.size()));
    for (const auto& e : ckpt.entries) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.append(e.name);
        put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        std::size_t count = 1;
        for (int d : e.shape) {
            put_u32(out, static_cast<std::uint32_t>(d));
            count *= static_cast<std::size_t>(d);
        }
        if (count != e.values.size())
            throw DataError("checkpoint entry " + e.name + ": " +
                            std::to_string(e.values.size()) + " values for shape " +
                            Tensor<float>::shape_string(e.shape));
        for (float f : e.values) put_f32(out, f);
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw DataError("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    Reader r(path);
    {
        std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        r.buf = std::move(buf);
    }
    const std::string magic = r.bytes(sizeof(kMagic));
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint " + path + ": bad magic bytes");
    Checkpoint ckpt;
    ckpt.format_version = r.u32();
    if (ckpt.format_version != kCheckpointVersion)
        throw DataError("checkpoint " + path + ": format version " +
                        std::to_string(ckpt.format_version) + " unsupported, this build reads " +
                        std::to_string(kCheckpointVersion));
    ckpt.iteration = r.u64();
    ckpt.config_digest = r.u64();
    const std::uint32_t rng_len = r.u32();
    ckpt.rng_state = r.bytes(rng_len);
    const std::uint64_t count = r.u64();
    ckpt.entries.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const std::uint32_t name_len = r.u32();
        e.name = r.bytes(name_len);
        const std::uint32_t ndim = r.u32();
        std::size_t n = 1;
        e.shape.resize(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) {
            e.shape[d] = static_cast<int>(r.u32());
            n *= static_cast<std::size_t>(e.shape[d]);
        }
        e.values.resize(n);
        for (std::size_t v = 0; v < n; ++v) e.values[v] = r.f32();
        ckpt.entries.push_back(std::move(e));
    }
    if (r.pos != r.buf.size())
        throw DataError("checkpoint " + path + ": " + std::to_string(r.buf.size() - r.pos) +
                        " trailing bytes");
    return ckpt;
}

std::vector<NameMapping> parse_name_map(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("name map: cannot open " + path);
    std::vector<NameMapping> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto arrow = line.find("->");
        if (arrow == std::string::npos)
            throw DataError("name map " + path + ":" + std::to_string(lineno) +
                            ": expected 'source -> target'");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        NameMapping m{trim(line.substr(0, arrow)), trim(line.substr(arrow + 2))};
        if (m.source.empty() || m.target.empty())
            throw DataError("name map " + path + ":" + std::to_string(lineno) +
                            ": empty source or target");
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace clipnet
