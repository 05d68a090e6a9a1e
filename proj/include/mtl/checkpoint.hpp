#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

// Ordered named-tensor container with a versioned binary file format
// ("MTLC"). Round-trips are bit-exact; files are written to a temp name and
// renamed into place so a failed save never leaves a partial checkpoint.
class Checkpoint {
 public:
  void add(const std::string& name, const Tensor& t);  // duplicate name -> error
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;  // missing name -> FormatError
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// SHA-256 over the raw bytes of the given tensors, in order. Used to assert
// that a parameter set is untouched by a training phase.
std::string checksum_tensors(const std::vector<Tensor>& tensors);

}  // namespace mtl
