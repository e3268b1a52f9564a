#pragma once

#include "umlab/model.hpp"
#include "umlab/tsphead.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

namespace umlab {

/// Embedding parameters, optional TSP-Head, and free-form training metadata.
///
/// CKPTV1 text layout (LF endings, decimals at 9 significant digits):
///
///     CKPTV1 <num_layers>
///     <rows> <cols>            per layer: header, weight rows, one bias line
///     ...
///     ACT <relu|tanh>          optional, relu when absent
///     META <key> <value>       optional, repeated
///     TSP <H> <d>              optional head section:
///     <layers> <layer_norm> <residual> <dropout>
///     <rows> <cols> + rows     per block, in TspHeadParams::flatten order
struct Checkpoint {
    Parameters model;
    std::optional<TspHeadParams> head;
    std::map<std::string, std::string> meta;
};

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace umlab
