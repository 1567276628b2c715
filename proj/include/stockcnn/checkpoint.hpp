#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stockcnn/errors.hpp"
#include "stockcnn/model.hpp"

namespace stockcnn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts need a byte swap");

inline void to_json(nlohmann::json& j, const ChartGeometry& g) {
    j = {{"price_rows", g.price_rows},
         {"divider_rows", g.divider_rows},
         {"turnover_rows", g.turnover_rows}};
}
inline void from_json(const nlohmann::json& j, ChartGeometry& g) {
    j.at("price_rows").get_to(g.price_rows);
    j.at("divider_rows").get_to(g.divider_rows);
    j.at("turnover_rows").get_to(g.turnover_rows);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"kind", c.kind},
         {"n", c.n},
         {"fusion_dim", c.fusion_dim},
         {"seq_dim", c.seq_dim},
         {"head_hidden", c.head_hidden},
         {"lambda", c.lambda},
         {"leaky_slope", c.leaky_slope},
         {"seed", c.seed},
         {"geometry", c.geometry},
         {"precision", c.precision}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("kind").get_to(c.kind);
    j.at("n").get_to(c.n);
    j.at("fusion_dim").get_to(c.fusion_dim);
    j.at("seq_dim").get_to(c.seq_dim);
    j.at("head_hidden").get_to(c.head_hidden);
    j.at("lambda").get_to(c.lambda);
    j.at("leaky_slope").get_to(c.leaky_slope);
    j.at("seed").get_to(c.seed);
    j.at("geometry").get_to(c.geometry);
    j.at("precision").get_to(c.precision);
}

struct EvalMetrics {
    double loss = 0;  // ce + lambda * mse, the early-stopping metric
    double ce = 0;
    double mse = 0;
    double accuracy = 0;
    long tp = 0, fp = 0, tn = 0, fn = 0;
    std::optional<double> ppv, npv;  // absent when a denominator is empty
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    EvalMetrics val;
};

inline void to_json(nlohmann::json& j, const EpochStats& e) {
    j = {{"epoch", e.epoch},
         {"train_loss", e.train_loss},
         {"val_loss", e.val.loss},
         {"val_ce", e.val.ce},
         {"val_mse", e.val.mse},
         {"val_accuracy", e.val.accuracy},
         {"val_tp", e.val.tp},
         {"val_fp", e.val.fp},
         {"val_tn", e.val.tn},
         {"val_fn", e.val.fn},
         {"val_ppv", e.val.ppv ? nlohmann::json(*e.val.ppv) : nlohmann::json()},
         {"val_npv", e.val.npv ? nlohmann::json(*e.val.npv) : nlohmann::json()}};
}
inline void from_json(const nlohmann::json& j, EpochStats& e) {
    j.at("epoch").get_to(e.epoch);
    j.at("train_loss").get_to(e.train_loss);
    j.at("val_loss").get_to(e.val.loss);
    j.at("val_ce").get_to(e.val.ce);
    j.at("val_mse").get_to(e.val.mse);
    j.at("val_accuracy").get_to(e.val.accuracy);
    j.at("val_tp").get_to(e.val.tp);
    j.at("val_fp").get_to(e.val.fp);
    j.at("val_tn").get_to(e.val.tn);
    j.at("val_fn").get_to(e.val.fn);
    e.val.ppv = j.at("val_ppv").is_null() ? std::nullopt
                                          : std::optional<double>(j.at("val_ppv").get<double>());
    e.val.npv = j.at("val_npv").is_null() ? std::nullopt
                                          : std::optional<double>(j.at("val_npv").get<double>());
}

// All model parameters plus architecture and training metadata; the on-disk
// form is a JSON header followed by the raw little-endian parameter blob.
struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    ModelConfig config;
    std::string dtype;  // "float32" | "float64"
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::vector<unsigned char> bytes;
    };
    std::vector<Entry> params;
    std::vector<EpochStats> history;
    int best_epoch = 0;
};

template <typename T>
inline const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>)
        return "float32";
    else
        return "float64";
}

template <typename T>
inline Checkpoint make_checkpoint(Model<T>& model) {
    Checkpoint c;
    c.config = model.config();
    c.config.precision = dtype_name<T>();
    c.dtype = dtype_name<T>();
    for (ParamBlock<T>* b : model.params()) {
        Checkpoint::Entry e;
        e.name = b->name;
        e.shape = b->value.shape;
        e.bytes.resize(b->value.size() * sizeof(T));
        std::memcpy(e.bytes.data(), b->value.data.data(), e.bytes.size());
        c.params.push_back(std::move(e));
    }
    return c;
}

// Loads parameters into an existing model; every block must match by name,
// shape, and dtype.
template <typename T>
inline void import_params(Model<T>& model, const Checkpoint& c) {
    if (c.dtype != dtype_name<T>())
        throw ConfigError("checkpoint dtype " + c.dtype + " does not match model " +
                          dtype_name<T>());
    auto blocks = model.params();
    if (blocks.size() != c.params.size())
        throw ConfigError("checkpoint has " + std::to_string(c.params.size()) +
                          " parameter blocks, model expects " + std::to_string(blocks.size()));
    for (size_t i = 0; i < blocks.size(); ++i) {
        const auto& e = c.params[i];
        if (e.name != blocks[i]->name || e.shape != blocks[i]->value.shape)
            throw ConfigError("checkpoint block '" + e.name + "' does not match model block '" +
                              blocks[i]->name + "'");
        if (e.bytes.size() != blocks[i]->value.size() * sizeof(T))
            throw FormatError("checkpoint block '" + e.name + "' has wrong byte count");
        std::memcpy(blocks[i]->value.data.data(), e.bytes.data(), e.bytes.size());
    }
}

template <typename T>
inline Model<T> model_from_checkpoint(const Checkpoint& c) {
    Model<T> model(c.config);
    import_params(model, c);
    return model;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    nlohmann::json header;
    header["dtype"] = c.dtype;
    header["config"] = c.config;
    header["history"] = c.history;
    header["best_epoch"] = c.best_epoch;
    nlohmann::json table = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& e : c.params) {
        table.push_back({{"name", e.name},
                         {"shape", e.shape},
                         {"offset", offset},
                         {"nbytes", e.bytes.size()}});
        offset += e.bytes.size();
    }
    header["params"] = table;
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write("SCNNCKPT", 8);
    const std::uint32_t version = Checkpoint::kFormatVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), std::streamsize(htext.size()));
    for (const auto& e : c.params)
        out.write(reinterpret_cast<const char*>(e.bytes.data()), std::streamsize(e.bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, "SCNNCKPT", 8) != 0)
        throw FormatError("not a checkpoint file: " + path);
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != Checkpoint::kFormatVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(Checkpoint::kFormatVersion) + ")");
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in) throw FormatError("truncated checkpoint header: " + path);
    std::string htext(hlen, '\0');
    in.read(htext.data(), std::streamsize(hlen));
    if (std::uint64_t(in.gcount()) != hlen) throw FormatError("truncated checkpoint header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad checkpoint header: " + std::string(e.what()));
    }

    Checkpoint c;
    try {
        c.dtype = header.at("dtype").get<std::string>();
        c.config = header.at("config").get<ModelConfig>();
        c.history = header.at("history").get<std::vector<EpochStats>>();
        c.best_epoch = header.at("best_epoch").get<int>();
        for (const auto& row : header.at("params")) {
            Checkpoint::Entry e;
            e.name = row.at("name").get<std::string>();
            e.shape = row.at("shape").get<std::vector<int>>();
            e.bytes.resize(row.at("nbytes").get<std::uint64_t>());
            c.params.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint header missing fields: " + std::string(e.what()));
    }

    for (auto& e : c.params) {
        in.read(reinterpret_cast<char*>(e.bytes.data()), std::streamsize(e.bytes.size()));
        if (std::uint64_t(in.gcount()) != e.bytes.size())
            throw FormatError("truncated checkpoint blob: " + path);
    }
    char extra;
    if (in.get(extra)) throw FormatError("trailing bytes in checkpoint: " + path);
    return c;
}

}  // namespace stockcnn
