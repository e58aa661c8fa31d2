#include "polybal/toric_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace polybal {

namespace {

long long gcd_ll(long long a, long long b) {
    a = std::llabs(a);
    b = std::llabs(b);
    while (b) {
        long long t = a % b;
        a = b;
        b = t;
    }
    return a;
}

long long dot_ll(const std::vector<long long>& a, const std::vector<long long>& b) {
    long long s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Counter-clockwise convex hull (Andrew monotone chain), strict turns only.
std::vector<LatticePoint> hull_2d(std::vector<LatticePoint> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    auto cross = [](const LatticePoint& o, const LatticePoint& a, const LatticePoint& b) {
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    };
    std::vector<LatticePoint> h(2 * pts.size());
    size_t k = 0;
    for (size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    for (size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    h.resize(k - 1);
    return h;
}

// Rank of an integer matrix via fraction-free elimination.
int integer_rank(std::vector<std::vector<long long>> rows) {
    int rank = 0;
    size_t cols = rows.empty() ? 0 : rows[0].size();
    for (size_t c = 0; c < cols && rank < static_cast<int>(rows.size()); ++c) {
        size_t piv = rank;
        while (piv < rows.size() && rows[piv][c] == 0) ++piv;
        if (piv == rows.size()) continue;
        std::swap(rows[rank], rows[piv]);
        for (size_t r = rank + 1; r < rows.size(); ++r) {
            if (rows[r][c] == 0) continue;
            long long a = rows[rank][c], b = rows[r][c];
            long long g = gcd_ll(a, b);
            long long fa = b / g, fb = a / g;
            for (size_t cc = 0; cc < cols; ++cc)
                rows[r][cc] = rows[r][cc] * fb - rows[rank][cc] * fa;
        }
        ++rank;
    }
    return rank;
}

Rational triangle_area_2d(const LatticePoint& a, const LatticePoint& b, const LatticePoint& c) {
    long long d = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    return Rational(d, 2);
}

}  // namespace

void SubtorusAction::validate(int ambient_dimension) const {
    for (const auto& g : generators) {
        if (static_cast<int>(g.size()) != ambient_dimension)
            throw std::invalid_argument("subtorus generator dimension mismatch");
    }
    if (generators.empty()) return;
    if (rank() > ambient_dimension)
        throw std::invalid_argument("more subtorus generators than ambient dimension");
    if (integer_rank(generators) != rank())
        throw std::invalid_argument("subtorus generators are linearly dependent");
}

ToricPolarization ToricPolarization::from_vertices(std::vector<LatticePoint> vertices) {
    if (vertices.empty()) throw std::invalid_argument("polytope: empty vertex list");
    const int n = static_cast<int>(vertices[0].size());
    for (const auto& v : vertices)
        if (static_cast<int>(v.size()) != n)
            throw std::invalid_argument("polytope: inconsistent vertex dimensions");

    ToricPolarization pol;
    pol.n_ = n;

    if (n == 1) {
        long long lo = vertices[0][0], hi = vertices[0][0];
        for (const auto& v : vertices) {
            lo = std::min(lo, v[0]);
            hi = std::max(hi, v[0]);
        }
        if (lo == hi) throw std::invalid_argument("polytope: degenerate (zero length)");
        std::set<long long> vals;
        for (const auto& v : vertices) vals.insert(v[0]);
        if (vals.size() != 2)
            throw std::invalid_argument("polytope: 1-d vertex list must be the two endpoints");
        pol.vertices_ = {{lo}, {hi}};
        pol.inequalities_ = {{{1}, lo}, {{-1}, -hi}};
    } else if (n == 2) {
        auto h = hull_2d(vertices);
        if (h.size() < 3) throw std::invalid_argument("polytope: degenerate (not 2-dimensional)");
        std::set<LatticePoint> given(vertices.begin(), vertices.end());
        std::set<LatticePoint> hset(h.begin(), h.end());
        if (given != hset)
            throw std::invalid_argument(
                "polytope: vertex list is not the vertex set of its convex hull");
        pol.vertices_ = h;  // counter-clockwise
        for (size_t i = 0; i < h.size(); ++i) {
            const auto& v = h[i];
            const auto& w = h[(i + 1) % h.size()];
            long long dx = w[0] - v[0], dy = w[1] - v[1];
            long long ax = -dy, ay = dx;  // inward for a CCW boundary
            long long g = gcd_ll(ax, ay);
            ax /= g;
            ay /= g;
            pol.inequalities_.push_back({{ax, ay}, ax * v[0] + ay * v[1]});
        }
    } else if (n == 3) {
        throw std::invalid_argument(
            "polytope: inequalities must be supplied for dimension 3");
    } else {
        throw std::invalid_argument("polytope: only dimensions 1..3 are supported");
    }

    pol.finalize();
    return pol;
}

ToricPolarization ToricPolarization::from_vertices_and_inequalities(
    std::vector<LatticePoint> vertices, std::vector<Inequality> inequalities) {
    if (vertices.empty()) throw std::invalid_argument("polytope: empty vertex list");
    const int n = static_cast<int>(vertices[0].size());
    if (n <= 2) {
        // Derived form is authoritative in low dimension; cross-check the supplied one.
        ToricPolarization pol = from_vertices(vertices);
        for (const auto& ineq : inequalities) {
            for (const auto& v : pol.vertices_)
                if (dot_ll(ineq.normal, v) < ineq.offset)
                    throw std::invalid_argument("polytope: supplied inequality cuts off a vertex");
        }
        return pol;
    }
    if (n != 3) throw std::invalid_argument("polytope: only dimensions 1..3 are supported");

    ToricPolarization pol;
    pol.n_ = n;
    std::sort(vertices.begin(), vertices.end());
    vertices.erase(std::unique(vertices.begin(), vertices.end()), vertices.end());
    pol.vertices_ = std::move(vertices);
    for (auto& ineq : inequalities) {
        if (static_cast<int>(ineq.normal.size()) != n)
            throw std::invalid_argument("polytope: inequality dimension mismatch");
        long long g = 0;
        for (long long c : ineq.normal) g = gcd_ll(g, c);
        if (g == 0) throw std::invalid_argument("polytope: zero inequality normal");
        if (ineq.offset % g != 0)
            throw std::invalid_argument("polytope: inequality is not lattice-primitive");
        for (auto& c : ineq.normal) c /= g;
        ineq.offset /= g;
    }
    pol.inequalities_ = std::move(inequalities);

    // Every vertex satisfies every inequality; every inequality is a facet
    // (tight on a rank-2 set of vertices); every vertex is a 0-face.
    for (const auto& ineq : pol.inequalities_) {
        std::vector<LatticePoint> tight;
        for (const auto& v : pol.vertices_) {
            long long s = dot_ll(ineq.normal, v);
            if (s < ineq.offset)
                throw std::invalid_argument("polytope: a vertex violates an inequality");
            if (s == ineq.offset) tight.push_back(v);
        }
        if (tight.size() < 3)
            throw std::invalid_argument("polytope: inequality is not a facet (too few tight vertices)");
        std::vector<std::vector<long long>> diffs;
        for (size_t i = 1; i < tight.size(); ++i) {
            std::vector<long long> d(n);
            for (int c = 0; c < n; ++c) d[c] = tight[i][c] - tight[0][c];
            diffs.push_back(d);
        }
        if (integer_rank(diffs) != 2)
            throw std::invalid_argument("polytope: facet vertices do not span a plane");
    }
    for (const auto& v : pol.vertices_) {
        std::vector<std::vector<long long>> tightnormals;
        for (const auto& ineq : pol.inequalities_)
            if (dot_ll(ineq.normal, v) == ineq.offset) tightnormals.push_back(ineq.normal);
        if (integer_rank(tightnormals) != n)
            throw std::invalid_argument("polytope: listed point is not a vertex");
    }

    pol.finalize();
    return pol;
}

LatticePoint ToricPolarization::box_lo() const {
    LatticePoint lo = vertices_[0];
    for (const auto& v : vertices_)
        for (int c = 0; c < n_; ++c) lo[c] = std::min(lo[c], v[c]);
    return lo;
}

LatticePoint ToricPolarization::box_hi() const {
    LatticePoint hi = vertices_[0];
    for (const auto& v : vertices_)
        for (int c = 0; c < n_; ++c) hi[c] = std::max(hi[c], v[c]);
    return hi;
}

bool ToricPolarization::contains_dilated(const LatticePoint& p, long long dilation) const {
    for (const auto& ineq : inequalities_)
        if (dot_ll(ineq.normal, p) < dilation * ineq.offset) return false;
    return true;
}

long long ToricPolarization::lattice_point_count(long long dilation) const {
    if (dilation == 0) return 1;
    LatticePoint lo = box_lo(), hi = box_hi();
    for (int c = 0; c < n_; ++c) {
        lo[c] *= dilation;
        hi[c] *= dilation;
    }
    long long count = 0;
    LatticePoint p = lo;
    while (true) {
        if (contains_dilated(p, dilation)) ++count;
        int axis = n_ - 1;
        while (axis >= 0) {
            if (++p[axis] <= hi[axis]) break;
            p[axis] = lo[axis];
            --axis;
        }
        if (axis < 0) break;
    }
    return count;
}

void ToricPolarization::finalize() {
    // Degree by exact interpolation of the lattice-point count: the n-th
    // finite difference of the count at dilations 0..n equals n!*vol(P).
    std::vector<long long> counts(n_ + 1);
    for (int i = 0; i <= n_; ++i) counts[i] = lattice_point_count(i);
    long long deg = 0, bin = 1;
    for (int i = 0; i <= n_; ++i) {
        long long s = ((n_ - i) % 2 == 0) ? 1 : -1;
        deg += s * bin * counts[i];
        bin = bin * (n_ - i) / (i + 1);
    }
    if (deg <= 0) throw std::invalid_argument("polytope: degenerate (zero volume)");

    long long nfact = 1;
    for (int i = 2; i <= n_; ++i) nfact *= i;
    degree_ = Rational(deg);
    volume_ = Rational(deg, nfact);

    // Cross-check against an exact fan triangulation.
    Rational tri_vol(0);
    if (n_ == 1) {
        tri_vol = Rational(vertices_[1][0] - vertices_[0][0]);
        if (tri_vol < Rational(0)) tri_vol = -tri_vol;
    } else if (n_ == 2) {
        for (size_t i = 1; i + 1 < vertices_.size(); ++i)
            tri_vol += triangle_area_2d(vertices_[0], vertices_[i], vertices_[i + 1]);
        if (tri_vol < Rational(0)) tri_vol = -tri_vol;
    } else {
        const LatticePoint& apex = vertices_[0];
        for (const auto& ineq : inequalities_) {
            if (dot_ll(ineq.normal, apex) == ineq.offset) continue;
            std::vector<LatticePoint> face;
            for (const auto& v : vertices_)
                if (dot_ll(ineq.normal, v) == ineq.offset) face.push_back(v);
            // Order the facet polygon around its centroid in a projected plane.
            int drop = 0;
            for (int c = 1; c < 3; ++c)
                if (std::llabs(ineq.normal[c]) > std::llabs(ineq.normal[drop])) drop = c;
            int u = (drop + 1) % 3, w = (drop + 2) % 3;
            double cu = 0, cw = 0;
            for (const auto& v : face) {
                cu += static_cast<double>(v[u]);
                cw += static_cast<double>(v[w]);
            }
            cu /= static_cast<double>(face.size());
            cw /= static_cast<double>(face.size());
            std::sort(face.begin(), face.end(), [&](const LatticePoint& a, const LatticePoint& b) {
                double aa = std::atan2(static_cast<double>(a[w]) - cw, static_cast<double>(a[u]) - cu);
                double ab = std::atan2(static_cast<double>(b[w]) - cw, static_cast<double>(b[u]) - cu);
                return aa < ab;
            });
            Rational pyramid(0);
            for (size_t i = 1; i + 1 < face.size(); ++i) {
                long long d1[3], d2[3], d3[3];
                for (int c = 0; c < 3; ++c) {
                    d1[c] = face[0][c] - apex[c];
                    d2[c] = face[i][c] - apex[c];
                    d3[c] = face[i + 1][c] - apex[c];
                }
                long long det = d1[0] * (d2[1] * d3[2] - d2[2] * d3[1]) -
                                d1[1] * (d2[0] * d3[2] - d2[2] * d3[0]) +
                                d1[2] * (d2[0] * d3[1] - d2[1] * d3[0]);
                pyramid += Rational(det, 6);
            }
            if (pyramid < Rational(0)) pyramid = -pyramid;
            tri_vol += pyramid;
        }
    }
    if (tri_vol != volume_)
        throw std::invalid_argument("polytope: lattice-count volume disagrees with triangulation");
}

Rational ToricPolarization::interior_coordinate_integral(int axis) const {
    if (axis < 0 || axis >= n_) throw std::invalid_argument("interior integral: bad axis");
    if (n_ == 1) {
        long long a = vertices_[0][0], b = vertices_[1][0];
        return Rational(b * b - a * a, 2);
    }
    if (n_ == 2) {
        Rational total(0);
        for (size_t i = 1; i + 1 < vertices_.size(); ++i) {
            Rational area = triangle_area_2d(vertices_[0], vertices_[i], vertices_[i + 1]);
            Rational centroid(vertices_[0][axis] + vertices_[i][axis] + vertices_[i + 1][axis], 3);
            total += area * centroid;
        }
        return total;
    }
    throw std::invalid_argument("interior integral: implemented for dimension <= 2");
}

Rational ToricPolarization::boundary_coordinate_integral(int axis) const {
    if (axis < 0 || axis >= n_) throw std::invalid_argument("boundary integral: bad axis");
    if (n_ == 1) {
        return Rational(vertices_[0][0] + vertices_[1][0]);
    }
    if (n_ == 2) {
        Rational total(0);
        for (size_t i = 0; i < vertices_.size(); ++i) {
            const auto& v = vertices_[i];
            const auto& w = vertices_[(i + 1) % vertices_.size()];
            long long len = gcd_ll(w[0] - v[0], w[1] - v[1]);
            total += Rational(len) * Rational(v[axis] + w[axis], 2);
        }
        return total;
    }
    throw std::invalid_argument("boundary integral: implemented for dimension <= 2");
}

Rational ToricPolarization::boundary_measure() const {
    if (n_ == 1) return Rational(2);
    if (n_ == 2) {
        Rational total(0);
        for (size_t i = 0; i < vertices_.size(); ++i) {
            const auto& v = vertices_[i];
            const auto& w = vertices_[(i + 1) % vertices_.size()];
            total += Rational(gcd_ll(w[0] - v[0], w[1] - v[1]));
        }
        return total;
    }
    throw std::invalid_argument("boundary measure: implemented for dimension <= 2");
}

SectionBasis enumerate_basis(const ToricPolarization& pol, int level) {
    if (level < 1) throw std::invalid_argument("enumerate_basis: level must be >= 1");
    SectionBasis basis;
    basis.dimension = pol.dimension();
    basis.level = level;
    basis.degree = pol.degree();
    basis.polytope = std::make_shared<const ToricPolarization>(pol);

    const int n = pol.dimension();
    LatticePoint lo = pol.box_lo(), hi = pol.box_hi();
    for (int c = 0; c < n; ++c) {
        lo[c] *= level;
        hi[c] *= level;
    }
    LatticePoint p = lo;
    while (true) {
        if (pol.contains_dilated(p, level)) basis.points.push_back(p);
        int axis = n - 1;
        while (axis >= 0) {
            if (++p[axis] <= hi[axis]) break;
            p[axis] = lo[axis];
            --axis;
        }
        if (axis < 0) break;
    }
    // The odometer with the last axis innermost emits points in
    // lexicographic order already.
    basis.n_prime = Rational(basis.count()) / basis.degree;
    return basis;
}

int CharacterDecomposition::flat_index(int block1, int member1) const {
    if (block1 < 1 || block1 > block_count())
        throw std::out_of_range("flat_index: block out of range");
    if (member1 < 1 || member1 > multiplicity(block1 - 1))
        throw std::out_of_range("flat_index: member out of range");
    return offsets_[block1 - 1] + member1;
}

CharacterDecomposition decompose_by_characters(std::shared_ptr<const SectionBasis> basis,
                                               const SubtorusAction& action) {
    if (!basis) throw std::invalid_argument("decompose: null basis");
    action.validate(basis->dimension);

    std::map<std::vector<long long>, std::vector<int>> blocks;
    for (size_t i = 0; i < basis->points.size(); ++i) {
        std::vector<long long> chi(action.generators.size());
        for (size_t a = 0; a < action.generators.size(); ++a) {
            long long s = 0;
            for (int c = 0; c < basis->dimension; ++c)
                s += action.generators[a][c] * basis->points[i][c];
            chi[a] = s;
        }
        blocks[chi].push_back(static_cast<int>(i));
    }

    CharacterDecomposition dec;
    dec.basis_ = std::move(basis);
    dec.action_ = action;
    int offset = 0;
    for (auto& [chi, members] : blocks) {
        dec.characters_.push_back(chi);
        dec.members_.push_back(members);
        dec.offsets_.push_back(offset);
        for (int b : members) {
            dec.flat_to_basis_.push_back(b);
            dec.block_of_flat_.push_back(static_cast<int>(dec.characters_.size()) - 1);
        }
        offset += static_cast<int>(members.size());
    }
    if (offset != dec.basis_->count())
        throw std::logic_error("decompose: blocks do not partition the basis");
    return dec;
}

}  // namespace polybal
