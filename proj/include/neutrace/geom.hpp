#pragma once

#include <cstdint>
#include <iosfwd>
#include <unordered_map>
#include <vector>

#include "neutrace/common.hpp"

namespace neutrace::geom {

struct SkeletonNode {
    int64_t id = 0;
    Vec3 pos;             // nanometers
    double radius = 0;    // nanometers
    int64_t parent = -1;  // -1 = root
};

/// Tree-structured skeleton: nodes plus the edge set implied by parent links.
/// Parent links must form a forest; node ids are unique.
struct Skeleton {
    std::vector<SkeletonNode> nodes;

    int index_of(int64_t id) const {
        auto it = index_.find(id);
        return it == index_.end() ? -1 : it->second;
    }

    /// (child_index, parent_index) for every non-root node, in node order.
    std::vector<std::pair<int, int>> edge_indices() const;

    std::vector<Vec3> positions() const;
    double total_length() const;

    /// Rebuilds the id index and checks invariants (unique ids, parents
    /// present, no cycles, radii >= 0, finite positions).
    void validate();

  private:
    std::unordered_map<int64_t, int> index_;
};

/// Parses SWC text: `id type x y z radius parent`, `#` comments. Positions and
/// radii are multiplied by unit_nm. Malformed lines report their line number.
Skeleton parse_swc(std::istream& in, double unit_nm);
Skeleton parse_swc_text(const std::string& text, double unit_nm);

/// Writes nodes in id order, 7 columns, positions divided by unit_nm.
void serialize_swc(const Skeleton& s, std::ostream& out, double unit_nm);

using PointSet = std::vector<Vec3>;

/// Mean over source points of the Euclidean distance to the nearest target
/// point (directed, source -> target).
double directed_chamfer(const PointSet& source, const PointSet& target);

/// Greedy max-min subsampling. The first index is 0 when seed == 0, otherwise
/// uniform in the seed. Ties break to the lowest index. If m > |points| the
/// last chosen index is repeated to reach m.
std::vector<int> farthest_point_sample(const PointSet& points, int m, uint64_t seed);

/// Sum of edge lengths over edges with both endpoints in the subset. The
/// subset must induce a connected subtree.
double path_length(const Skeleton& s, const std::vector<int64_t>& node_subset);

}  // namespace neutrace::geom
