#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dglm {

// On-disk container for model parameters.
//
// Layout: 8-byte magic "DGLMCKP1", a little-endian uint32 manifest byte
// length, the UTF-8 manifest, then the concatenated tensor payloads as
// little-endian float32 in manifest order.
//
// Manifest lines:
//   tensor <name> <dim0> [<dim1> ...]
//   meta <key> <value...>
class Checkpoint {
public:
    struct Tensor {
        std::string name;
        std::vector<int64_t> shape;
        std::vector<float> data;
        int64_t numel() const;
    };

    void add(const std::string& name, std::vector<int64_t> shape, std::vector<float> data);
    void set_meta(const std::string& key, const std::string& value);

    bool has(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    const std::vector<Tensor>& tensors() const { return tensors_; }

    bool has_meta(const std::string& key) const;
    const std::string& meta(const std::string& key) const;
    const std::map<std::string, std::string>& all_meta() const { return meta_; }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    static constexpr char kMagic[9] = "DGLMCKP1";

private:
    std::vector<Tensor> tensors_;
    std::map<std::string, int> index_;
    std::map<std::string, std::string> meta_;
};

}  // namespace dglm
