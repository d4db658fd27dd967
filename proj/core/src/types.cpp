#include "finrag/types.hpp"

#include <charconv>
#include <cmath>

namespace finrag {

std::string_view modality_name(Modality m) {
    switch (m) {
    case Modality::Text:
        return "text";
    case Modality::Table:
        return "table";
    case Modality::Image:
        return "image";
    }
    return "text";
}

Modality parse_modality(std::string_view name) {
    if (name == "text")
        return Modality::Text;
    if (name == "table")
        return Modality::Table;
    if (name == "image")
        return Modality::Image;
    throw InputError("unknown modality: " + std::string(name));
}

std::string ChunkId::str() const {
    std::string out = doc;
    out += '/';
    out += modality_name(modality);
    out += '/';
    out += std::to_string(seq);
    return out;
}

ChunkId ChunkId::parse(std::string_view s) {
    auto last = s.rfind('/');
    if (last == std::string_view::npos)
        throw InputError("malformed chunk id: " + std::string(s));
    auto mid = s.rfind('/', last - 1);
    if (mid == std::string_view::npos || mid == 0)
        throw InputError("malformed chunk id: " + std::string(s));

    ChunkId id;
    id.doc = std::string(s.substr(0, mid));
    id.modality = parse_modality(s.substr(mid + 1, last - mid - 1));
    auto seq_part = s.substr(last + 1);
    auto [ptr, ec] =
        std::from_chars(seq_part.data(), seq_part.data() + seq_part.size(), id.seq);
    if (ec != std::errc{} || ptr != seq_part.data() + seq_part.size())
        throw InputError("malformed chunk id sequence: " + std::string(s));
    return id;
}

EmbeddingVector EmbeddingVector::normalized(std::vector<float> values) {
    if (values.empty())
        throw InputError("cannot normalize an empty vector");
    double sq = 0.0;
    for (float v : values)
        sq += static_cast<double>(v) * v;
    if (sq == 0.0 || !std::isfinite(sq))
        throw InputError("cannot normalize a zero or non-finite vector");
    const double inv = 1.0 / std::sqrt(sq);
    for (float& v : values)
        v = static_cast<float>(v * inv);
    return EmbeddingVector(std::move(values));
}

float EmbeddingVector::dot(const EmbeddingVector& other) const {
    if (dim() != other.dim())
        throw ConfigError("embedding dimension mismatch: " + std::to_string(dim()) +
                          " vs " + std::to_string(other.dim()));
    double acc = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i)
        acc += static_cast<double>(values_[i]) * other.values_[i];
    return static_cast<float>(acc);
}

} // namespace finrag
