#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace damt {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// catch one type and print the message.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct IndexError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct OracleError : Error {
    using Error::Error;
};

inline std::vector<std::string> split_ws(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream iss(text);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << content;
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

// Flat key=value config files. Keys keep insertion order so files round-trip
// byte-identically.
class KvFile {
  public:
    KvFile() = default;

    static KvFile parse(const std::string& text) {
        KvFile kv;
        std::istringstream iss(text);
        std::string line;
        while (std::getline(iss, line)) {
            line = trim(line);
            if (line.empty() || line[0] == '#') continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos) throw FormatError("bad key=value line: " + line);
            kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return kv;
    }

    static KvFile load(const std::string& path) { return parse(read_file(path)); }

    void set(const std::string& key, const std::string& value) {
        auto it = index_.find(key);
        if (it == index_.end()) {
            index_[key] = order_.size();
            order_.emplace_back(key, value);
        } else {
            order_[it->second].second = value;
        }
    }
    void set(const std::string& key, double v) {
        std::ostringstream ss;
        ss.precision(17);
        ss << v;
        set(key, ss.str());
    }
    void set(const std::string& key, int64_t v) { set(key, std::to_string(v)); }
    void set(const std::string& key, uint64_t v) { set(key, std::to_string(v)); }

    bool has(const std::string& key) const { return index_.count(key) > 0; }

    const std::string& get(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) throw ConfigError("missing config key: " + key);
        return order_[it->second].second;
    }
    std::string get_or(const std::string& key, const std::string& fallback) const {
        return has(key) ? get(key) : fallback;
    }
    double get_double(const std::string& key) const { return std::stod(get(key)); }
    double get_double_or(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }
    int64_t get_int(const std::string& key) const { return std::stoll(get(key)); }
    int64_t get_int_or(const std::string& key, int64_t fallback) const {
        return has(key) ? get_int(key) : fallback;
    }
    uint64_t get_uint(const std::string& key) const { return std::stoull(get(key)); }
    uint64_t get_uint_or(const std::string& key, uint64_t fallback) const {
        return has(key) ? get_uint(key) : fallback;
    }
    bool get_bool_or(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string& v = get(key);
        return v == "1" || v == "true" || v == "yes" || v == "on";
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return order_; }

    std::string dump() const {
        std::string out;
        for (const auto& [k, v] : order_) {
            out += k;
            out += '=';
            out += v;
            out += '\n';
        }
        return out;
    }
    void save(const std::string& path) const { write_file(path, dump()); }

  private:
    std::vector<std::pair<std::string, std::string>> order_;
    std::map<std::string, size_t> index_;
};

// SHA-1, used for git-style content hashes in run manifests.
class Sha1 {
  public:
    Sha1() { reset(); }

    void reset() {
        h_[0] = 0x67452301u;
        h_[1] = 0xEFCDAB89u;
        h_[2] = 0x98BADCFEu;
        h_[3] = 0x10325476u;
        h_[4] = 0xC3D2E1F0u;
        buf_len_ = 0;
        total_ = 0;
    }

    void update(const void* data, size_t len) {
        const uint8_t* p = static_cast<const uint8_t*>(data);
        total_ += len;
        while (len > 0) {
            size_t take = std::min<size_t>(64 - buf_len_, len);
            for (size_t i = 0; i < take; ++i) buf_[buf_len_ + i] = p[i];
            buf_len_ += take;
            p += take;
            len -= take;
            if (buf_len_ == 64) {
                process_block(buf_);
                buf_len_ = 0;
            }
        }
    }

    std::string hex_digest() {
        uint64_t bit_len = total_ * 8;
        uint8_t pad = 0x80;
        update(&pad, 1);
        uint8_t zero = 0;
        while (buf_len_ != 56) update(&zero, 1);
        uint8_t len_be[8];
        for (int i = 0; i < 8; ++i) len_be[i] = uint8_t(bit_len >> (56 - 8 * i));
        update(len_be, 8);
        static const char* hexc = "0123456789abcdef";
        std::string out;
        for (uint32_t h : h_) {
            for (int i = 28; i >= 0; i -= 4) out += hexc[(h >> i) & 0xF];
        }
        return out;
    }

  private:
    static uint32_t rotl(uint32_t x, int n) { return (x << n) | (x >> (32 - n)); }

    void process_block(const uint8_t* block) {
        uint32_t w[80];
        for (int i = 0; i < 16; ++i) {
            w[i] = (uint32_t(block[4 * i]) << 24) | (uint32_t(block[4 * i + 1]) << 16) |
                   (uint32_t(block[4 * i + 2]) << 8) | uint32_t(block[4 * i + 3]);
        }
        for (int i = 16; i < 80; ++i) w[i] = rotl(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
        uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
        for (int i = 0; i < 80; ++i) {
            uint32_t f, k;
            if (i < 20) {
                f = (b & c) | (~b & d);
                k = 0x5A827999u;
            } else if (i < 40) {
                f = b ^ c ^ d;
                k = 0x6ED9EBA1u;
            } else if (i < 60) {
                f = (b & c) | (b & d) | (c & d);
                k = 0x8F1BBCDCu;
            } else {
                f = b ^ c ^ d;
                k = 0xCA62C1D6u;
            }
            uint32_t tmp = rotl(a, 5) + f + e + k + w[i];
            e = d;
            d = c;
            c = rotl(b, 30);
            b = a;
            a = tmp;
        }
        h_[0] += a;
        h_[1] += b;
        h_[2] += c;
        h_[3] += d;
        h_[4] += e;
    }

    uint32_t h_[5];
    uint8_t buf_[64];
    size_t buf_len_ = 0;
    uint64_t total_ = 0;
};

inline std::string sha1_hex(const std::string& bytes) {
    Sha1 h;
    h.update(bytes.data(), bytes.size());
    return h.hex_digest();
}

// Same construction git uses for blob object ids.
inline std::string git_blob_hash(const std::string& content) {
    std::string header = "blob " + std::to_string(content.size());
    Sha1 h;
    h.update(header.data(), header.size() + 1);  // include trailing NUL
    h.update(content.data(), content.size());
    return h.hex_digest();
}

inline std::string hash_file(const std::string& path) { return git_blob_hash(read_file(path)); }

}  // namespace damt
