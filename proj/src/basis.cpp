#include "prosum/basis.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "prosum/b64.hpp"

namespace prosum {

using nlohmann::json;

std::string to_string(BasisKind k) {
    switch (k) {
        case BasisKind::gaussian_dense: return "gaussian_dense";
        case BasisKind::gaussian_rank1: return "gaussian_rank1";
        case BasisKind::dct_truncation: return "dct_truncation";
        case BasisKind::permutation_columns: return "permutation_columns";
        case BasisKind::diagonal_tuple: return "diagonal_tuple";
        case BasisKind::explicit_: return "explicit";
    }
    return "?";
}

BasisKind basis_kind_from_string(const std::string& s) {
    if (s == "gaussian_dense") return BasisKind::gaussian_dense;
    if (s == "gaussian_rank1") return BasisKind::gaussian_rank1;
    if (s == "dct_truncation") return BasisKind::dct_truncation;
    if (s == "permutation_columns") return BasisKind::permutation_columns;
    if (s == "diagonal_tuple") return BasisKind::diagonal_tuple;
    if (s == "explicit") return BasisKind::explicit_;
    throw InvalidDescriptor("unknown basis kind: " + s);
}

double BasisDescriptor::effective_scale() const {
    if (scale > 0.0) return scale;
    if (kind == BasisKind::diagonal_tuple) return 1.0;
    return 1.0 / std::sqrt(static_cast<double>(rows));
}

void BasisDescriptor::validate() const {
    if (rows < 1 || cols < 1)
        throw InvalidDescriptor("descriptor shape must be positive, got " + std::to_string(rows) +
                                "x" + std::to_string(cols));
    if (count < 1) throw InvalidDescriptor("descriptor count must be >= 1");
    switch (kind) {
        case BasisKind::dct_truncation:
            if (static_cast<Index>(h) * w != rows)
                throw InvalidDescriptor("dct_truncation: h*w != rows");
            if (cols > rows) throw InvalidDescriptor("dct_truncation: m > h*w");
            if (count != 1) throw InvalidDescriptor("dct_truncation: count must be 1");
            break;
        case BasisKind::permutation_columns:
            if (cols > rows) throw InvalidDescriptor("permutation_columns: m > n");
            if (count != 1) throw InvalidDescriptor("permutation_columns: count must be 1");
            break;
        case BasisKind::diagonal_tuple:
            if (rows != cols)
                throw InvalidDescriptor("diagonal_tuple: diagonal basis on non-square shape " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
            if (tuple_width < 1) throw InvalidDescriptor("diagonal_tuple: tuple_width must be >= 1");
            break;
        case BasisKind::explicit_:
            if (static_cast<int>(explicit_mats.size()) != count)
                throw InvalidDescriptor("explicit: count != number of matrices");
            for (const auto& m : explicit_mats)
                if (m.rows() != rows || m.cols() != cols)
                    throw InvalidDescriptor("explicit: matrix shape " + m.shape_str() +
                                            " != declared " + std::to_string(rows) + "x" +
                                            std::to_string(cols));
            break;
        default:
            break;
    }
}

BasisDescriptor BasisDescriptor::gaussian_dense(Index rows, Index cols, int count,
                                                std::uint64_t seed, double scale) {
    BasisDescriptor d;
    d.kind = BasisKind::gaussian_dense;
    d.rows = rows;
    d.cols = cols;
    d.count = count;
    d.seed = seed;
    d.scale = scale;
    d.validate();
    return d;
}

BasisDescriptor BasisDescriptor::gaussian_rank1(Index rows, Index cols, int count,
                                                std::uint64_t seed, double scale) {
    BasisDescriptor d;
    d.kind = BasisKind::gaussian_rank1;
    d.rows = rows;
    d.cols = cols;
    d.count = count;
    d.seed = seed;
    d.scale = scale;
    d.validate();
    return d;
}

BasisDescriptor BasisDescriptor::dct_truncation_desc(int h, int w, int m) {
    BasisDescriptor d;
    d.kind = BasisKind::dct_truncation;
    d.rows = static_cast<Index>(h) * w;
    d.cols = m;
    d.h = h;
    d.w = w;
    d.validate();
    return d;
}

BasisDescriptor BasisDescriptor::permutation_columns_desc(Index n, Index m, std::uint64_t seed) {
    BasisDescriptor d;
    d.kind = BasisKind::permutation_columns;
    d.rows = n;
    d.cols = m;
    d.seed = seed;
    d.validate();
    return d;
}

BasisDescriptor BasisDescriptor::diagonal_tuple(Index n, int count, int tuple_width,
                                                std::uint64_t seed, double scale) {
    BasisDescriptor d;
    d.kind = BasisKind::diagonal_tuple;
    d.rows = d.cols = n;
    d.count = count;
    d.tuple_width = tuple_width;
    d.seed = seed;
    d.scale = scale;
    d.validate();
    return d;
}

BasisDescriptor BasisDescriptor::explicit_mats_desc(std::vector<MatrixF> mats) {
    if (mats.empty()) throw InvalidDescriptor("explicit: empty matrix list");
    BasisDescriptor d;
    d.kind = BasisKind::explicit_;
    d.rows = mats.front().rows();
    d.cols = mats.front().cols();
    d.count = static_cast<int>(mats.size());
    d.explicit_mats = std::move(mats);
    d.validate();
    return d;
}

json BasisDescriptor::to_json() const {
    json j{{"kind", to_string(kind)}, {"rows", rows},   {"cols", cols},
           {"count", count},          {"seed", seed},   {"scale", scale}};
    if (kind == BasisKind::dct_truncation) {
        j["h"] = h;
        j["w"] = w;
    }
    if (kind == BasisKind::diagonal_tuple) j["tuple_width"] = tuple_width;
    if (kind == BasisKind::explicit_) {
        json mats = json::array();
        for (const auto& m : explicit_mats) mats.push_back(encode_f32_blob(m.storage()));
        j["mats"] = std::move(mats);
    }
    return j;
}

BasisDescriptor BasisDescriptor::from_json(const json& j) {
    BasisDescriptor d;
    d.kind = basis_kind_from_string(j.at("kind").get<std::string>());
    d.rows = j.at("rows").get<Index>();
    d.cols = j.at("cols").get<Index>();
    d.count = j.at("count").get<int>();
    d.seed = j.at("seed").get<std::uint64_t>();
    d.scale = j.at("scale").get<double>();
    if (d.kind == BasisKind::dct_truncation) {
        d.h = j.at("h").get<int>();
        d.w = j.at("w").get<int>();
    }
    if (d.kind == BasisKind::diagonal_tuple) d.tuple_width = j.at("tuple_width").get<int>();
    if (d.kind == BasisKind::explicit_) {
        for (const auto& blob : j.at("mats")) {
            MatrixF m(d.rows, d.cols,
                      decode_f32_blob<float>(blob.get<std::string>(),
                                             static_cast<std::size_t>(d.rows * d.cols)));
            d.explicit_mats.push_back(std::move(m));
        }
    }
    d.validate();
    return d;
}

}  // namespace prosum
