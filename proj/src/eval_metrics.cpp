#include "neutrace/eval/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>

namespace neutrace::eval {

EvalReport score_predictions(const std::vector<double>& probabilities, const std::vector<int>& labels) {
    if (probabilities.empty()) fail("data-error", "score_predictions requires at least one prediction");
    if (probabilities.size() != labels.size())
        fail("bad-argument", "predictions and labels differ in length");

    EvalReport r;
    auto count_at = [&](double threshold, int64_t& tp, int64_t& fp, int64_t& tn, int64_t& fn) {
        tp = fp = tn = fn = 0;
        for (size_t i = 0; i < probabilities.size(); ++i) {
            bool predicted = probabilities[i] > threshold;
            bool actual = labels[i] == 1;
            if (predicted && actual)
                tp++;
            else if (predicted)
                fp++;
            else if (actual)
                fn++;
            else
                tn++;
        }
    };
    count_at(0.5, r.tp, r.fp, r.tn, r.fn);
    r.precision = (r.tp + r.fp) > 0 ? double(r.tp) / double(r.tp + r.fp) : 1.0;
    r.recall = (r.tp + r.fn) > 0 ? double(r.tp) / double(r.tp + r.fn) : 0.0;
    r.f1 = (r.precision + r.recall) > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;

    std::set<double> uniq(probabilities.begin(), probabilities.end());
    std::vector<double> thresholds{*uniq.begin() - 1.0};  // below all scores: recall 1
    thresholds.insert(thresholds.end(), uniq.begin(), uniq.end());
    for (double t : thresholds) {
        int64_t tp, fp, tn, fn;
        count_at(t, tp, fp, tn, fn);
        PrPoint p;
        p.threshold = t;
        p.precision = (tp + fp) > 0 ? double(tp) / double(tp + fp) : 1.0;
        p.recall = (tp + fn) > 0 ? double(tp) / double(tp + fn) : 0.0;
        r.curve.push_back(p);
    }
    return r;
}

void write_pr_curve_csv(std::ostream& out, const EvalReport& report, uint64_t config_hash) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "# config=%016llx\n", (unsigned long long)config_hash);
    out << buf << "threshold,precision,recall\n";
    for (const PrPoint& p : report.curve) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f\n", p.threshold, p.precision, p.recall);
        out << buf;
    }
}

void write_pr_curve_svg(std::ostream& out, const EvalReport& report) {
    const int size = 420, pad = 40, plot = size - 2 * pad;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << size - pad << "\" x2=\"" << size - pad << "\" y2=\""
        << size - pad << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << size - pad
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << size / 2 << "\" y=\"" << size - 8 << "\" text-anchor=\"middle\">recall</text>\n";
    out << "<text x=\"12\" y=\"" << size / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 12 "
        << size / 2 << ")\">precision</text>\n<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
    char buf[64];
    for (const PrPoint& p : report.curve) {
        double x = pad + p.recall * plot;
        double y = size - pad - p.precision * plot;
        std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", x, y);
        out << buf;
    }
    out << "\"/>\n</svg>\n";
}

void write_summary(std::ostream& out, const EvalReport& report, uint64_t config_hash) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "config=%016llx\n", (unsigned long long)config_hash);
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "threshold=0.5 precision=%.4f recall=%.4f f1=%.4f tp=%lld fp=%lld tn=%lld fn=%lld\n",
                  report.precision, report.recall, report.f1, (long long)report.tp, (long long)report.fp,
                  (long long)report.tn, (long long)report.fn);
    out << buf;
}

namespace {

struct UnionFind {
    std::vector<int> parent, size;
    explicit UnionFind(int n) : parent(n), size(n, 1) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    }
    void merge(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (size[a] < size[b]) std::swap(a, b);
        parent[b] = a;
        size[a] += size[b];
    }
};

}  // namespace

ClusterMap agglomerate(const std::vector<uint32_t>& segments, const std::vector<ScoredPair>& pairs,
                       double threshold) {
    std::map<uint32_t, int> index;
    for (uint32_t s : segments) index.emplace(s, 0);
    int next = 0;
    for (auto& [seg, idx] : index) idx = next++;
    UnionFind uf(next);
    for (const ScoredPair& p : pairs) {
        if (!(p.probability > threshold)) continue;
        auto a = index.find(p.seg_a), b = index.find(p.seg_b);
        if (a == index.end() || b == index.end()) continue;
        uf.merge(a->second, b->second);
    }
    std::vector<uint32_t> rep(next, 0);
    for (auto& [seg, idx] : index) {  // ascending seg id: first hit per root is the minimum
        int root = uf.find(idx);
        if (rep[root] == 0) rep[root] = seg;
    }
    ClusterMap out;
    for (auto& [seg, idx] : index) out[seg] = rep[uf.find(idx)];
    return out;
}

double expected_run_length(const std::vector<geom::Skeleton>& skeletons,
                           const std::vector<std::vector<uint32_t>>& node_segments, const ClusterMap& clusters,
                           std::vector<double>* per_skeleton_erl) {
    if (skeletons.size() != node_segments.size())
        fail("bad-argument", "expected_run_length: one segment map per skeleton required");
    auto cluster_of = [&](uint32_t seg) -> uint32_t {
        if (seg == 0) return 0;
        auto it = clusters.find(seg);
        return it == clusters.end() ? seg : it->second;
    };

    // merged-wrong clusters: containing nodes from two or more skeletons
    std::map<uint32_t, int> first_skeleton;
    std::set<uint32_t> wrong;
    for (size_t s = 0; s < skeletons.size(); ++s) {
        if (skeletons[s].nodes.size() != node_segments[s].size())
            fail("bad-argument", "expected_run_length: node map length mismatch");
        for (uint32_t seg : node_segments[s]) {
            uint32_t c = cluster_of(seg);
            if (c == 0) continue;
            auto [it, inserted] = first_skeleton.emplace(c, int(s));
            if (!inserted && it->second != int(s)) wrong.insert(c);
        }
    }

    double num = 0, den = 0;
    if (per_skeleton_erl) per_skeleton_erl->assign(skeletons.size(), 0.0);
    for (size_t s = 0; s < skeletons.size(); ++s) {
        const geom::Skeleton& skel = skeletons[s];
        const auto& segs = node_segments[s];
        const size_t n = skel.nodes.size();
        std::vector<uint32_t> node_cluster(n);
        for (size_t i = 0; i < n; ++i) node_cluster[i] = cluster_of(segs[i]);

        UnionFind uf{int(n)};
        std::vector<double> weight(n, 0);
        auto edges = skel.edge_indices();
        for (auto [child, parent] : edges) {
            double len = distance(skel.nodes[child].pos, skel.nodes[parent].pos);
            weight[child] += len / 2;
            weight[parent] += len / 2;
            if (node_cluster[child] != 0 && node_cluster[child] == node_cluster[parent])
                uf.merge(child, parent);
        }
        std::vector<double> run(n, 0);
        for (auto [child, parent] : edges)
            if (node_cluster[child] != 0 && node_cluster[child] == node_cluster[parent])
                run[uf.find(child)] += distance(skel.nodes[child].pos, skel.nodes[parent].pos);

        double s_num = 0, s_den = 0;
        for (size_t i = 0; i < n; ++i) {
            double rl = 0;
            if (node_cluster[i] != 0 && !wrong.count(node_cluster[i])) rl = run[uf.find(int(i))];
            s_num += weight[i] * rl;
            s_den += weight[i];
        }
        if (per_skeleton_erl) (*per_skeleton_erl)[s] = s_den > 0 ? s_num / s_den : 0.0;
        num += s_num;
        den += s_den;
    }
    return den > 0 ? num / den : 0.0;
}

TracingResult tracing_experiment(const std::vector<geom::Skeleton>& skeletons,
                                 const std::vector<std::vector<uint32_t>>& node_segments,
                                 const std::vector<uint32_t>& segment_universe,
                                 const std::vector<reg::CandidatePair>& candidates,
                                 const std::function<double(const reg::CandidatePair&)>& scorer,
                                 double merge_threshold) {
    TracingResult r;
    for (const auto& p : candidates) {
        double prob = scorer(p);
        if (!(prob >= 0.0 && prob <= 1.0)) fail("data-error", "classifier probability outside [0,1]");
        r.scored.push_back({p.seg_a, p.seg_b, prob});
    }
    ClusterMap identity;
    for (uint32_t s : segment_universe) identity[s] = s;
    r.erl_before_nm = expected_run_length(skeletons, node_segments, identity, nullptr);
    r.clusters = agglomerate(segment_universe, r.scored, merge_threshold);
    r.erl_after_nm = expected_run_length(skeletons, node_segments, r.clusters, &r.per_skeleton_erl);
    r.relative_gain = r.erl_before_nm > 0 ? (r.erl_after_nm - r.erl_before_nm) / r.erl_before_nm : 0.0;
    return r;
}

}  // namespace neutrace::eval
