#pragma once

#include "gsopt/nn.hpp"

#include <map>
#include <string>
#include <vector>

namespace gsopt {

/// Single-file store of named float32 arrays, used for module weights.
class TensorArchive {
public:
    void put(const std::string& name, const std::vector<double>& values);
    /// Values widened back to double; missing names raise.
    const std::vector<double>& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::vector<std::string> names() const;  ///< Insertion order.

    void save(const std::string& path) const;
    static TensorArchive load(const std::string& path);

private:
    std::vector<std::string> order_;
    std::map<std::string, std::vector<double>> tensors_;
};

/// Writes every parameter to an archive file.
void save_params(const std::string& path, const std::vector<ParamRef>& params);

/// Loads parameters by name; sizes must match exactly. Gradients are left
/// untouched. Values round through float32.
void load_params(const std::string& path, const std::vector<ParamRef>& params);

} // namespace gsopt
