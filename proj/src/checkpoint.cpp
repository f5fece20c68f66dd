#include "dglm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dglm {

int64_t Checkpoint::Tensor::numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

void Checkpoint::add(const std::string& name, std::vector<int64_t> shape, std::vector<float> data) {
    if (index_.count(name)) throw std::runtime_error("checkpoint: duplicate tensor " + name);
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw std::runtime_error("checkpoint: bad shape for tensor " + name);
        n *= d;
    }
    if (n != static_cast<int64_t>(data.size()))
        throw std::runtime_error("checkpoint: data size mismatch for tensor " + name);
    index_[name] = static_cast<int>(tensors_.size());
    tensors_.push_back({name, std::move(shape), std::move(data)});
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
    if (key.find_first_of(" \n") != std::string::npos)
        throw std::runtime_error("checkpoint: meta key may not contain spaces");
    if (value.find('\n') != std::string::npos)
        throw std::runtime_error("checkpoint: meta value may not contain newlines");
    meta_[key] = value;
}

bool Checkpoint::has(const std::string& name) const { return index_.count(name) > 0; }

const Checkpoint::Tensor& Checkpoint::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
    return tensors_[it->second];
}

bool Checkpoint::has_meta(const std::string& key) const { return meta_.count(key) > 0; }

const std::string& Checkpoint::meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw std::runtime_error("checkpoint: missing meta key " + key);
    return it->second;
}

void Checkpoint::save(const std::string& path) const {
    std::ostringstream manifest;
    for (const auto& [key, value] : meta_) manifest << "meta " << key << " " << value << "\n";
    for (const auto& t : tensors_) {
        manifest << "tensor " << t.name;
        for (int64_t d : t.shape) manifest << " " << d;
        manifest << "\n";
    }
    std::string m = manifest.str();
    if (m.size() > 0xffffffffULL) throw std::runtime_error("checkpoint: manifest too large");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, 8);
    uint32_t len = static_cast<uint32_t>(m.size());
    unsigned char lenb[4] = {static_cast<unsigned char>(len & 0xff),
                             static_cast<unsigned char>((len >> 8) & 0xff),
                             static_cast<unsigned char>((len >> 16) & 0xff),
                             static_cast<unsigned char>((len >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(lenb), 4);
    out.write(m.data(), static_cast<std::streamsize>(m.size()));
    for (const auto& t : tensors_) {
        // host is little-endian; write raw floats
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    unsigned char lenb[4];
    in.read(reinterpret_cast<char*>(lenb), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
    uint32_t len = lenb[0] | (lenb[1] << 8) | (lenb[2] << 16) |
                   (static_cast<uint32_t>(lenb[3]) << 24);
    std::string m(len, '\0');
    in.read(m.data(), len);
    if (!in) throw std::runtime_error("checkpoint: truncated manifest in " + path);

    Checkpoint ckp;
    std::istringstream ms(m);
    std::string line;
    while (std::getline(ms, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value[0] == ' ') value.erase(0, 1);
            ckp.meta_[key] = value;
        } else if (kind == "tensor") {
            Tensor t;
            ls >> t.name;
            int64_t d;
            while (ls >> d) t.shape.push_back(d);
            if (t.name.empty() || t.shape.empty())
                throw std::runtime_error("checkpoint: malformed manifest line: " + line);
            t.data.resize(static_cast<size_t>(t.numel()));
            ckp.index_[t.name] = static_cast<int>(ckp.tensors_.size());
            ckp.tensors_.push_back(std::move(t));
        } else {
            throw std::runtime_error("checkpoint: unknown manifest entry: " + line);
        }
    }
    for (auto& t : ckp.tensors_) {
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!in) throw std::runtime_error("checkpoint: truncated payload for tensor " + t.name);
    }
    char extra;
    if (in.read(&extra, 1))
        throw std::runtime_error("checkpoint: trailing bytes after payload in " + path);
    return ckp;
}

}  // namespace dglm
