#include "neutrace/geom.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace neutrace::geom {

std::vector<std::pair<int, int>> Skeleton::edge_indices() const {
    std::vector<std::pair<int, int>> edges;
    edges.reserve(nodes.size());
    for (size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].parent < 0) continue;
        int p = index_of(nodes[i].parent);
        edges.emplace_back(int(i), p);
    }
    return edges;
}

std::vector<Vec3> Skeleton::positions() const {
    std::vector<Vec3> out;
    out.reserve(nodes.size());
    for (const auto& n : nodes) out.push_back(n.pos);
    return out;
}

double Skeleton::total_length() const {
    double len = 0;
    for (auto [c, p] : edge_indices()) len += distance(nodes[c].pos, nodes[p].pos);
    return len;
}

void Skeleton::validate() {
    index_.clear();
    index_.reserve(nodes.size() * 2);
    for (size_t i = 0; i < nodes.size(); ++i) {
        const auto& n = nodes[i];
        if (!n.pos.finite()) fail("skeleton-invariant", "non-finite position at node id " + std::to_string(n.id));
        if (!(n.radius >= 0)) fail("skeleton-invariant", "negative radius at node id " + std::to_string(n.id));
        if (!index_.emplace(n.id, int(i)).second)
            fail("swc-duplicate-id", "duplicate node id " + std::to_string(n.id));
    }
    for (const auto& n : nodes) {
        if (n.parent >= 0 && index_.find(n.parent) == index_.end())
            fail("swc-missing-parent",
                 "node " + std::to_string(n.id) + " references missing parent " + std::to_string(n.parent));
    }
    // cycle check: walk parent chains, marking visit epochs
    std::vector<int> state(nodes.size(), 0);  // 0 unseen, 1 on path, 2 done
    for (size_t start = 0; start < nodes.size(); ++start) {
        if (state[start] == 2) continue;
        std::vector<int> path;
        int cur = int(start);
        while (cur >= 0 && state[cur] == 0) {
            state[cur] = 1;
            path.push_back(cur);
            int64_t par = nodes[cur].parent;
            cur = par < 0 ? -1 : index_of(par);
        }
        if (cur >= 0 && state[cur] == 1)
            fail("swc-cycle", "cycle through node id " + std::to_string(nodes[cur].id));
        for (int i : path) state[i] = 2;
    }
}

Skeleton parse_swc(std::istream& in, double unit_nm) {
    Skeleton s;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        SkeletonNode n;
        int type = 0;
        double x, y, z, r;
        if (!(ls >> n.id >> type >> x >> y >> z >> r >> n.parent))
            fail("swc-malformed", "malformed SWC line " + std::to_string(line_no));
        std::string extra;
        if (ls >> extra) fail("swc-malformed", "trailing tokens on SWC line " + std::to_string(line_no));
        n.pos = Vec3{x * unit_nm, y * unit_nm, z * unit_nm};
        n.radius = r * unit_nm;
        if (!(n.radius >= 0)) fail("swc-malformed", "negative radius on SWC line " + std::to_string(line_no));
        if (n.id == n.parent) fail("swc-cycle", "node is its own parent on SWC line " + std::to_string(line_no));
        s.nodes.push_back(n);
    }
    s.validate();
    return s;
}

Skeleton parse_swc_text(const std::string& text, double unit_nm) {
    std::istringstream in(text);
    return parse_swc(in, unit_nm);
}

void serialize_swc(const Skeleton& s, std::ostream& out, double unit_nm) {
    std::vector<const SkeletonNode*> ordered;
    ordered.reserve(s.nodes.size());
    for (const auto& n : s.nodes) ordered.push_back(&n);
    std::sort(ordered.begin(), ordered.end(),
              [](const SkeletonNode* a, const SkeletonNode* b) { return a->id < b->id; });
    char buf[256];
    for (const SkeletonNode* n : ordered) {
        std::snprintf(buf, sizeof(buf), "%lld 0 %.6f %.6f %.6f %.6f %lld\n", (long long)n->id,
                      n->pos.x / unit_nm, n->pos.y / unit_nm, n->pos.z / unit_nm, n->radius / unit_nm,
                      (long long)n->parent);
        out << buf;
    }
}

double directed_chamfer(const PointSet& source, const PointSet& target) {
    if (source.empty() || target.empty()) fail("empty-point-set", "directed_chamfer requires non-empty sets");
    double total = 0;
    for (const Vec3& s : source) {
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& t : target) {
            double d2 = (s - t).norm2();
            if (d2 < best) best = d2;
        }
        total += std::sqrt(best);
    }
    return total / double(source.size());
}

std::vector<int> farthest_point_sample(const PointSet& points, int m, uint64_t seed) {
    if (points.empty()) fail("empty-point-set", "farthest_point_sample requires non-empty input");
    if (m < 1) fail("bad-argument", "farthest_point_sample requires m >= 1");
    int n = int(points.size());
    int first = 0;
    if (seed != 0) {
        std::mt19937_64 rng(seed);
        first = int(rng() % uint64_t(n));
    }
    std::vector<int> picks;
    picks.reserve(m);
    picks.push_back(first);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    std::vector<char> chosen(n, 0);
    chosen[first] = 1;
    int last = first;
    while (int(picks.size()) < m) {
        if (int(picks.size()) >= n) {
            picks.push_back(picks.back());  // padding rule
            continue;
        }
        int best = -1;
        double best_d = -1;
        for (int i = 0; i < n; ++i) {
            double d2 = (points[i] - points[last]).norm2();
            if (d2 < min_d2[i]) min_d2[i] = d2;
            if (!chosen[i] && min_d2[i] > best_d) {
                best_d = min_d2[i];
                best = i;
            }
        }
        picks.push_back(best);
        chosen[best] = 1;
        last = best;
    }
    return picks;
}

double path_length(const Skeleton& s, const std::vector<int64_t>& node_subset) {
    if (node_subset.empty()) fail("bad-argument", "path_length requires a non-empty subset");
    std::unordered_map<int64_t, int> in_subset;
    for (int64_t id : node_subset) {
        int idx = s.index_of(id);
        if (idx < 0) fail("bad-argument", "path_length: unknown node id " + std::to_string(id));
        in_subset.emplace(id, idx);
    }
    // adjacency restricted to the subset
    std::unordered_map<int64_t, std::vector<int64_t>> adj;
    double total = 0;
    for (auto [id, idx] : in_subset) {
        int64_t par = s.nodes[idx].parent;
        if (par < 0) continue;
        auto pit = in_subset.find(par);
        if (pit == in_subset.end()) continue;
        total += distance(s.nodes[idx].pos, s.nodes[pit->second].pos);
        adj[id].push_back(par);
        adj[par].push_back(id);
    }
    // connectivity check (BFS from the first subset node)
    std::vector<int64_t> stack{node_subset.front()};
    std::unordered_map<int64_t, char> seen{{node_subset.front(), 1}};
    while (!stack.empty()) {
        int64_t cur = stack.back();
        stack.pop_back();
        for (int64_t nb : adj[cur]) {
            if (!seen.count(nb)) {
                seen[nb] = 1;
                stack.push_back(nb);
            }
        }
    }
    if (seen.size() != in_subset.size())
        fail("disconnected-subset", "path_length: subset does not induce a connected subtree");
    return total;
}

}  // namespace neutrace::geom
