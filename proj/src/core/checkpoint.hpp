#ifndef IMAC_CORE_CHECKPOINT_HPP
#define IMAC_CORE_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/tensor.hpp"

namespace imac {

// Single-file checkpoint: a manifest of named blocks followed by flat
// little-endian float64 payloads. Layout documented in docs/checkpoint.md.
class BlockFile {
 public:
  struct Block {
    std::vector<std::uint64_t> shape;
    std::vector<double> data;
  };

  void add(const std::string& name, std::vector<std::uint64_t> shape,
           std::vector<double> data);
  void add_scalar(const std::string& name, double v) { add(name, {1}, {v}); }
  void add_tensor(const std::string& name, const Tensor& t);

  bool has(const std::string& name) const { return blocks_.count(name) != 0; }
  const Block& get(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  void load_tensor(const std::string& name, Tensor& t) const;

  const std::map<std::string, Block>& blocks() const { return blocks_; }

  void write(const std::string& path) const;  // atomic: tmp file + rename
  static BlockFile read(const std::string& path);

 private:
  std::map<std::string, Block> blocks_;
};

}  // namespace imac

#endif
