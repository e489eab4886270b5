#include "advsr/weights.hpp"

#include <string_view>

#include "advsr/binary_io.hpp"
#include "advsr/errors.hpp"

namespace advsr {

std::size_t weight_header_size(const ParameterList& params)
{
    std::size_t size = 4 + 2 + 4;
    for (const auto& p : params) size += 4 + p.name.size() + 4 + 4 * p.tensor.rank() + 8;
    return size;
}

std::vector<char> encode_weights(const ParameterList& params)
{
    io::ByteWriter w;
    w.bytes(std::string_view(kWeightMagic, 4));
    w.u16(kWeightVersion);
    w.u32(static_cast<std::uint32_t>(params.size()));
    std::uint64_t offset = weight_header_size(params);
    for (const auto& p : params) {
        w.u32(static_cast<std::uint32_t>(p.name.size()));
        w.bytes(p.name);
        w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
        for (std::size_t d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
        w.u64(offset);
        offset += 8 * p.tensor.numel();
    }
    for (const auto& p : params) w.f64s(p.tensor.data());
    return w.buffer();
}

ParameterList decode_weights(std::span<const char> bytes)
{
    io::ByteReader r(bytes, "weight file");
    if (r.bytes(4) != std::string_view(kWeightMagic, 4)) r.fail("bad magic (expected ADVW)");
    const std::uint16_t version = r.u16();
    if (version != kWeightVersion) r.fail("unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32();

    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Entry> table;
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        const std::uint32_t len = r.u32();
        e.name = r.bytes(len);
        const std::uint32_t rank = r.u32();
        if (rank > 8) r.fail("tensor '" + e.name + "' has implausible rank " + std::to_string(rank));
        for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.u32());
        e.offset = r.u64();
        table.push_back(std::move(e));
    }

    std::uint64_t expected = r.offset();
    for (const auto& e : table) {
        if (e.offset != expected) {
            r.fail("tensor '" + e.name + "' payload offset " + std::to_string(e.offset) + " inconsistent with table (expected " +
                   std::to_string(expected) + ")");
        }
        expected += 8 * shape_numel(e.shape);
    }
    if (expected != bytes.size()) {
        r.fail("shape table implies " + std::to_string(expected) + " bytes but file has " + std::to_string(bytes.size()));
    }

    ParameterList params;
    for (auto& e : table) {
        Tensor t(std::move(e.shape));
        r.f64s(t.data());
        params.push_back({std::move(e.name), std::move(t)});
    }
    return params;
}

void save_weights(const ParameterList& params, const std::filesystem::path& path)
{
    io::write_file_atomic(path, encode_weights(params));
}

ParameterList load_weights(const std::filesystem::path& path)
{
    try {
        return decode_weights(io::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

SrModel load_sr_model(const std::filesystem::path& path)
{
    try {
        return SrModel::from_parameters(load_weights(path));
    } catch (const std::invalid_argument& e) {
        throw FormatError(path.string() + ": not an SR checkpoint: " + e.what());
    }
}

ClassifierModel load_classifier(const std::filesystem::path& path)
{
    try {
        return ClassifierModel::from_parameters(load_weights(path));
    } catch (const std::invalid_argument& e) {
        throw FormatError(path.string() + ": not a classifier checkpoint: " + e.what());
    }
}

}  // namespace advsr
