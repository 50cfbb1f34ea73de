#include "bialign/model.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace bialign {

using nlohmann::json;

const char* role_name(Role r) { return r == Role::teacher ? "teacher" : "student"; }

Role role_from_name(const std::string& name) {
    if (name == "teacher") return Role::teacher;
    if (name == "student") return Role::student;
    throw ConfigError("unknown model role: " + name);
}

ModelConfig teacher_default(int vocab_size, int max_seq_len) {
    return {vocab_size, 128, 4, 4, max_seq_len, Role::teacher};
}

ModelConfig student_default(int vocab_size, int max_seq_len) {
    return {vocab_size, 64, 2, 4, max_seq_len, Role::student};
}

namespace {

constexpr char kMagic[4] = {'B', 'I', 'A', 'L'};

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw DataError(std::string("checkpoint: truncated while reading ") + what);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

std::size_t expected_param_count(const ModelConfig& c) {
    const std::size_t d = static_cast<std::size_t>(c.d_model);
    const std::size_t per_layer = 2 * d            // ln1
                                  + 4 * (d * d + d) // q, k, v, o projections
                                  + 2 * d           // ln2
                                  + 4 * d * d + 4 * d + 4 * d * d + d; // mlp
    return static_cast<std::size_t>(c.vocab_size) * d +
           static_cast<std::size_t>(c.max_seq_len) * d +
           static_cast<std::size_t>(c.n_layers) * per_layer + 2 * d;
}

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    ck.config.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    write_u32(out, kCheckpointVersion);
    const json cfg = {{"vocab_size", ck.config.vocab_size},
                      {"d_model", ck.config.d_model},
                      {"n_layers", ck.config.n_layers},
                      {"n_heads", ck.config.n_heads},
                      {"max_seq_len", ck.config.max_seq_len},
                      {"role", role_name(ck.config.role)},
                      {"init_seed", ck.init_seed}};
    const std::string doc = cfg.dump();
    write_u32(out, static_cast<std::uint32_t>(doc.size()));
    out.write(doc.data(), static_cast<std::streamsize>(doc.size()));
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(ck.blob.data()),
              static_cast<std::streamsize>(ck.blob.size() * sizeof(float)));
    if (!out) throw DataError("failed while writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = read_u32(in, "version");
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " +
                        path);
    const std::uint32_t json_len = read_u32(in, "config length");
    std::string doc(json_len, '\0');
    if (!in.read(doc.data(), json_len))
        throw DataError("checkpoint: truncated config in " + path);
    Checkpoint ck;
    try {
        const json cfg = json::parse(doc);
        ck.config.vocab_size = cfg.at("vocab_size").get<int>();
        ck.config.d_model = cfg.at("d_model").get<int>();
        ck.config.n_layers = cfg.at("n_layers").get<int>();
        ck.config.n_heads = cfg.at("n_heads").get<int>();
        ck.config.max_seq_len = cfg.at("max_seq_len").get<int>();
        ck.config.role = role_from_name(cfg.at("role").get<std::string>());
        ck.init_seed = cfg.at("init_seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw DataError("checkpoint: invalid config json in " + path + ": " + e.what());
    }
    ck.config.validate();
    const std::size_t want = expected_param_count(ck.config);
    ck.blob.resize(want);
    if (!in.read(reinterpret_cast<char*>(ck.blob.data()),
                 static_cast<std::streamsize>(want * sizeof(float))))
        throw DataError("checkpoint: parameter blob shorter than config implies in " + path);
    char extra;
    if (in.read(&extra, 1))
        throw DataError("checkpoint: trailing bytes after parameter blob in " + path);
    return ck;
}

} // namespace bialign
