#include "fasp/checkpoint.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace fasp {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format stores little-endian tensors");

using json = nlohmann::ordered_json;

constexpr size_t k_align = 64;
constexpr int k_format_version = 1;

struct tensor_view {
    std::string name;
    float* data = nullptr;
    std::vector<Eigen::Index> shape;

    size_t count() const {
        size_t n = 1;
        for (Eigen::Index s : shape) n *= static_cast<size_t>(s);
        return n;
    }
    size_t bytes() const { return count() * sizeof(float); }
};

tensor_view view_of(const std::string& name, matf& m) {
    return {name, m.data(), {m.rows(), m.cols()}};
}

tensor_view view_of(const std::string& name, vecf& v) {
    return {name, v.data(), {v.size()}};
}

void enumerate_norm(std::vector<tensor_view>& out, const std::string& prefix, norm_params& n) {
    out.push_back(view_of(prefix + ".gamma", n.gamma));
    if (!n.rms) {
        out.push_back(view_of(prefix + ".beta", n.beta));
    }
}

// Canonical tensor order; load and save both walk this list.
std::vector<tensor_view> enumerate_tensors(decoder_model& model) {
    std::vector<tensor_view> out;
    out.push_back(view_of("tok_embedding", model.tok_embedding));
    out.push_back(view_of("pos_embedding", model.pos_embedding));

    for (size_t b = 0; b < model.blocks.size(); ++b) {
        decoder_block& block = model.blocks[b];
        const std::string prefix = "blocks." + std::to_string(b) + ".";
        const bool opt = block.family == arch_family::opt_style;
        const std::vector<std::string> names =
            opt ? std::vector<std::string>{"q", "k", "v", "o", "fc1", "fc2"}
                : std::vector<std::string>{"q", "k", "v", "o", "up", "gate", "down"};
        for (const auto& name : names) {
            linear_layer& layer = block.at(name);
            out.push_back(view_of(prefix + name + ".w", layer.w));
            if (layer.has_bias()) {
                out.push_back(view_of(prefix + name + ".b", layer.b));
            }
        }
        enumerate_norm(out, prefix + "attn_norm", block.attn_norm);
        enumerate_norm(out, prefix + "mlp_norm", block.mlp_norm);
    }
    enumerate_norm(out, "final_norm", model.final_norm);
    out.push_back(view_of("unembed", model.unembed));
    return out;
}

size_t align_up(size_t x) { return (x + k_align - 1) & ~(k_align - 1); }

json shape_json(const std::vector<Eigen::Index>& shape) {
    json a = json::array();
    for (Eigen::Index s : shape) a.push_back(static_cast<int64_t>(s));
    return a;
}

struct tensor_entry {
    std::vector<Eigen::Index> shape;
    size_t offset = 0;
    size_t length = 0;
};

std::vector<Eigen::Index> shape_from_json(const json& a) {
    if (!a.is_array() || a.empty()) {
        throw data_error("checkpoint manifest: tensor shape must be a non-empty array");
    }
    std::vector<Eigen::Index> shape;
    for (const auto& s : a) {
        const int64_t v = s.get<int64_t>();
        if (v < 0) throw data_error("checkpoint manifest: negative tensor dimension");
        shape.push_back(static_cast<Eigen::Index>(v));
    }
    return shape;
}

class manifest_table {
public:
    explicit manifest_table(const json& tensors) {
        if (!tensors.is_object()) {
            throw data_error("checkpoint manifest: 'tensors' must be an object");
        }
        for (const auto& [name, t] : tensors.items()) {
            tensor_entry e;
            if (t.value("dtype", std::string()) != "f32") {
                throw data_error("checkpoint tensor '" + name + "' has unsupported dtype");
            }
            e.shape = shape_from_json(t.at("shape"));
            e.offset = t.at("offset").get<size_t>();
            e.length = t.at("length").get<size_t>();
            entries_.emplace(name, std::move(e));
        }
    }

    bool has(const std::string& name) const { return entries_.count(name) > 0; }

    const tensor_entry& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw data_error("checkpoint is missing tensor '" + name + "'");
        }
        return it->second;
    }

    Eigen::Index dim(const std::string& name, size_t axis) const {
        const auto& e = at(name);
        if (axis >= e.shape.size()) {
            throw data_error("checkpoint tensor '" + name + "' has too few dimensions");
        }
        return e.shape[axis];
    }

    size_t size() const { return entries_.size(); }

private:
    std::map<std::string, tensor_entry> entries_;
};

arch_spec spec_from_json(const json& arch) {
    arch_spec spec;
    spec.family = family_from_name(arch.at("family").get<std::string>());
    spec.d_model = arch.at("d_model").get<int>();
    spec.d_hidden = arch.at("d_hidden").get<int>();
    spec.n_heads = arch.at("n_heads").get<int>();
    spec.n_blocks = arch.at("n_blocks").get<int>();
    spec.vocab = arch.at("vocab").get<int>();
    spec.max_seq = arch.at("max_seq").get<int>();
    return spec;
}

// Builds a zero model whose tensor shapes follow the manifest table, so the
// byte copy that follows lands in correctly-sized storage.
decoder_model skeleton_from_manifest(const arch_spec& spec, const json& blocks_meta,
                                     const manifest_table& table) {
    decoder_model model;
    model.spec = spec;
    const bool opt = spec.family == arch_family::opt_style;

    auto alloc_mat = [&](const std::string& name) {
        const auto& e = table.at(name);
        if (e.shape.size() != 2) {
            throw data_error("checkpoint tensor '" + name + "' must be 2-d");
        }
        return matf::Zero(e.shape[0], e.shape[1]).eval();
    };
    auto alloc_vec = [&](const std::string& name) {
        const auto& e = table.at(name);
        if (e.shape.size() != 1) {
            throw data_error("checkpoint tensor '" + name + "' must be 1-d");
        }
        return vecf::Zero(e.shape[0]).eval();
    };
    auto alloc_norm = [&](const std::string& prefix) {
        norm_params n;
        n.rms = !opt;
        n.gamma = alloc_vec(prefix + ".gamma");
        if (opt) {
            n.beta = alloc_vec(prefix + ".beta");
        } else if (table.has(prefix + ".beta")) {
            throw data_error("checkpoint: rms norm '" + prefix + "' must not carry a beta");
        }
        return n;
    };

    model.tok_embedding = alloc_mat("tok_embedding");
    model.pos_embedding = alloc_mat("pos_embedding");

    if (!blocks_meta.is_array() || static_cast<int>(blocks_meta.size()) != spec.n_blocks) {
        throw data_error("checkpoint manifest: 'blocks' must list every block");
    }
    for (int b = 0; b < spec.n_blocks; ++b) {
        decoder_block block;
        block.family = spec.family;
        block.n_heads = spec.n_heads;
        const std::string prefix = "blocks." + std::to_string(b) + ".";
        const std::vector<std::string> names =
            opt ? std::vector<std::string>{"q", "k", "v", "o", "fc1", "fc2"}
                : std::vector<std::string>{"q", "k", "v", "o", "up", "gate", "down"};
        for (const auto& name : names) {
            linear_layer layer;
            layer.w = alloc_mat(prefix + name + ".w");
            if (table.has(prefix + name + ".b")) {
                layer.b = alloc_vec(prefix + name + ".b");
            }
            block.proj.emplace(name, std::move(layer));
        }
        block.attn_norm = alloc_norm(prefix + "attn_norm");
        block.mlp_norm = alloc_norm(prefix + "mlp_norm");

        const json& meta = blocks_meta.at(static_cast<size_t>(b));
        for (const auto& s : meta.at("v_head_splits")) {
            block.v_head_splits.push_back(s.get<Eigen::Index>());
        }
        model.blocks.push_back(std::move(block));
    }
    model.final_norm = alloc_norm("final_norm");
    model.unembed = alloc_mat("unembed");
    return model;
}

}  // namespace

void save_checkpoint(const decoder_model& model, const std::filesystem::path& dir) {
    validate_model(model);
    std::filesystem::create_directories(dir);

    // Enumeration only reads tensor storage on the save path.
    auto views = enumerate_tensors(const_cast<decoder_model&>(model));

    json tensors = json::object();
    size_t offset = 0;
    for (const auto& v : views) {
        offset = align_up(offset);
        tensors[v.name] = {{"dtype", "f32"},
                           {"shape", shape_json(v.shape)},
                           {"offset", offset},
                           {"length", v.bytes()}};
        offset += v.bytes();
    }

    json blocks_meta = json::array();
    for (const auto& block : model.blocks) {
        json splits = json::array();
        for (Eigen::Index s : block.v_head_splits) splits.push_back(static_cast<int64_t>(s));
        blocks_meta.push_back({{"v_head_splits", splits}});
    }

    json manifest = {{"format_version", k_format_version},
                     {"arch",
                      {{"family", family_name(model.spec.family)},
                       {"d_model", model.spec.d_model},
                       {"d_hidden", model.spec.d_hidden},
                       {"n_heads", model.spec.n_heads},
                       {"n_blocks", model.spec.n_blocks},
                       {"vocab", model.spec.vocab},
                       {"max_seq", model.spec.max_seq}}},
                     {"blocks", blocks_meta},
                     {"tensors", tensors}};

    {
        std::ofstream mf(dir / "manifest.json");
        if (!mf) throw data_error("cannot write " + (dir / "manifest.json").string());
        mf << manifest.dump(2) << "\n";
    }

    std::ofstream bf(dir / "tensors.bin", std::ios::binary);
    if (!bf) throw data_error("cannot write " + (dir / "tensors.bin").string());
    size_t written = 0;
    for (const auto& v : views) {
        const size_t aligned = align_up(written);
        if (aligned > written) {
            const std::vector<char> pad(aligned - written, 0);
            bf.write(pad.data(), static_cast<std::streamsize>(pad.size()));
            written = aligned;
        }
        bf.write(reinterpret_cast<const char*>(v.data), static_cast<std::streamsize>(v.bytes()));
        written += v.bytes();
    }
    bf.flush();
    if (!bf) throw data_error("short write to " + (dir / "tensors.bin").string());
}

decoder_model load_checkpoint(const std::filesystem::path& dir) {
    json manifest;
    {
        std::ifstream mf(dir / "manifest.json");
        if (!mf) throw data_error("cannot open " + (dir / "manifest.json").string());
        try {
            mf >> manifest;
        } catch (const json::exception& e) {
            throw data_error("malformed manifest " + (dir / "manifest.json").string() + ": " +
                             e.what());
        }
    }
    try {
        if (manifest.value("format_version", -1) != k_format_version) {
            throw data_error("unsupported checkpoint format version");
        }
        const arch_spec spec = spec_from_json(manifest.at("arch"));
        validate_spec(spec);
        manifest_table table(manifest.at("tensors"));

        decoder_model model = skeleton_from_manifest(spec, manifest.at("blocks"), table);
        auto views = enumerate_tensors(model);
        if (views.size() != table.size()) {
            throw data_error("checkpoint lists " + std::to_string(table.size()) +
                             " tensors, expected " + std::to_string(views.size()));
        }

        std::ifstream bf(dir / "tensors.bin", std::ios::binary | std::ios::ate);
        if (!bf) throw data_error("cannot open " + (dir / "tensors.bin").string());
        const size_t file_size = static_cast<size_t>(bf.tellg());

        for (auto& v : views) {
            const tensor_entry& e = table.at(v.name);
            if (e.shape != v.shape) {
                throw data_error("checkpoint tensor '" + v.name + "' shape mismatch");
            }
            if (e.length != v.bytes()) {
                throw data_error("checkpoint tensor '" + v.name +
                                 "' length disagrees with its shape");
            }
            if (e.offset % k_align != 0 || e.offset + e.length > file_size) {
                throw data_error("checkpoint tensor '" + v.name + "' lies outside tensors.bin");
            }
            bf.seekg(static_cast<std::streamoff>(e.offset));
            bf.read(reinterpret_cast<char*>(v.data), static_cast<std::streamsize>(e.length));
            if (!bf) throw data_error("short read for checkpoint tensor '" + v.name + "'");
        }

        for (const auto& v : views) {
            const auto span = Eigen::Map<const vecf>(v.data, static_cast<Eigen::Index>(v.count()));
            if (!span.allFinite()) {
                throw data_error("checkpoint tensor '" + v.name + "' contains non-finite values");
            }
        }

        validate_model(model);
        return model;
    } catch (const json::exception& e) {
        throw data_error("malformed manifest " + (dir / "manifest.json").string() + ": " +
                         e.what());
    }
}

}  // namespace fasp
