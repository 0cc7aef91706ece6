#include "habitmask/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "binary_io.hpp"

namespace habitmask {
namespace detail {

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

}  // namespace detail

namespace num {

std::string encode_checkpoint(const Checkpoint& ckpt) {
    detail::ByteWriter w;
    w.str("HCKP");
    w.u16(kCheckpointVersion);
    const std::string header = ckpt.config.dump();
    w.u32(static_cast<std::uint32_t>(header.size()));
    w.str(header);
    w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& p : ckpt.params) {
        w.u32(static_cast<std::uint32_t>(p.name.size()));
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.dims()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : p.value.data()) w.f32(v);
    }
    return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    detail::ByteReader r(bytes);
    if (r.str(4) != "HCKP") throw FormatError("bad checkpoint magic");
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    const std::uint32_t header_len = r.u32();
    try {
        ckpt.config = nlohmann::json::parse(r.str(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint config header: ") + e.what());
    }
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = r.str(r.u32());
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw FormatError("implausible rank for parameter " + nt.name);
        Shape dims(rank);
        for (auto& d : dims) d = r.u32();
        const std::size_t n = shape_size(dims);
        if (n * sizeof(float) > r.remaining()) throw FormatError("truncated data for parameter " + nt.name);
        std::vector<float> data(n);
        r.raw(data.data(), n * sizeof(float));
        nt.value = Tensor<float>(std::move(dims), std::move(data));
        ckpt.params.push_back(std::move(nt));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    detail::write_file_bytes(path.string(), encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file_bytes(path.string()));
}

}  // namespace num
}  // namespace habitmask
