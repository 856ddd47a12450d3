#ifndef SWEOCP_GEOMETRY_HPP
#define SWEOCP_GEOMETRY_HPP

/**
 * @file
 * @brief Structured triangulation of a rectangular basin and P1 spaces on it.
 *
 * Vertices are numbered row-major with x running fastest. Every grid cell is
 * split along the diagonal joining its lower-left and upper-right corners.
 * Vector-valued spaces interleave components per vertex: dof 2*v holds the
 * x-component at vertex v, dof 2*v+1 the y-component.
 */

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "sweocp/error.hpp"

namespace sweocp {

struct MeshConfig
{
  double x_min = 0.0;
  double x_max = 10.0;
  double y_min = 0.0;
  double y_max = 10.0;
  int nx       = 15;
  int ny       = 15;

  void validate() const
  {
    if (!(x_max > x_min)) throw ConfigError("mesh: x_max must be greater than x_min");
    if (!(y_max > y_min)) throw ConfigError("mesh: y_max must be greater than y_min");
    if (nx < 1) throw ConfigError("mesh: nx must be >= 1");
    if (ny < 1) throw ConfigError("mesh: ny must be >= 1");
  }
};

/// Constant-gradient geometry of one P1 triangle.
struct ElementGeometry
{
  double area;
  /// Gradients of the three barycentric coordinates.
  std::array<Eigen::Vector2d, 3> grad;
};

struct Mesh
{
  MeshConfig config;
  std::vector<Eigen::Vector2d> vertices;
  std::vector<std::array<int, 3>> triangles;
  /// Sorted indices of vertices lying on the boundary.
  std::vector<int> boundary_vertices;

  int num_vertices() const { return static_cast<int>(vertices.size()); }
  int num_triangles() const { return static_cast<int>(triangles.size()); }

  double signed_area(int t) const
  {
    const auto & tri    = triangles[t];
    const Eigen::Vector2d e1 = vertices[tri[1]] - vertices[tri[0]];
    const Eigen::Vector2d e2 = vertices[tri[2]] - vertices[tri[0]];
    return 0.5 * (e1.x() * e2.y() - e1.y() * e2.x());
  }

  ElementGeometry element(int t) const
  {
    const auto & tri = triangles[t];
    const Eigen::Vector2d & p0 = vertices[tri[0]];
    const Eigen::Vector2d & p1 = vertices[tri[1]];
    const Eigen::Vector2d & p2 = vertices[tri[2]];
    const double det = (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p2.x() - p0.x()) * (p1.y() - p0.y());
    ElementGeometry g;
    g.area = 0.5 * det;
    // grad(lambda_a) = rot90(opposite edge) / (2 * area)
    g.grad[0] = Eigen::Vector2d(p1.y() - p2.y(), p2.x() - p1.x()) / det;
    g.grad[1] = Eigen::Vector2d(p2.y() - p0.y(), p0.x() - p2.x()) / det;
    g.grad[2] = Eigen::Vector2d(p0.y() - p1.y(), p1.x() - p0.x()) / det;
    return g;
  }

  /// Nodal interpolation of a scalar function.
  template<typename F>
  Eigen::VectorXd interpolate(F && f) const
  {
    Eigen::VectorXd out(num_vertices());
    for (int v = 0; v < num_vertices(); ++v) out[v] = f(vertices[v].x(), vertices[v].y());
    return out;
  }
};

inline Mesh build_structured_mesh(const MeshConfig & cfg)
{
  cfg.validate();
  Mesh mesh;
  mesh.config  = cfg;
  const int nx = cfg.nx, ny = cfg.ny;
  const double hx = (cfg.x_max - cfg.x_min) / nx;
  const double hy = (cfg.y_max - cfg.y_min) / ny;

  mesh.vertices.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (int j = 0; j <= ny; ++j) {
    // pin the far edge exactly to the corner coordinate
    const double y = (j == ny) ? cfg.y_max : cfg.y_min + j * hy;
    for (int i = 0; i <= nx; ++i) {
      const double x = (i == nx) ? cfg.x_max : cfg.x_min + i * hx;
      mesh.vertices.emplace_back(x, y);
    }
  }

  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  mesh.triangles.reserve(static_cast<std::size_t>(2 * nx * ny));
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int v00 = id(i, j), v10 = id(i + 1, j), v01 = id(i, j + 1), v11 = id(i + 1, j + 1);
      mesh.triangles.push_back({v00, v10, v11});
      mesh.triangles.push_back({v00, v11, v01});
    }
  }

  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      if (i == 0 || i == nx || j == 0 || j == ny) mesh.boundary_vertices.push_back(id(i, j));
    }
  }
  return mesh;
}

/// Debug dump: `v x y` per vertex, then `t i j k` per triangle.
inline void write_mesh(std::ostream & os, const Mesh & mesh)
{
  os.precision(17);
  for (const auto & p : mesh.vertices) os << "v " << p.x() << ' ' << p.y() << '\n';
  for (const auto & t : mesh.triangles) os << "t " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

enum class SpaceKind { ScalarP1, VectorP1 };

struct FeSpace
{
  SpaceKind kind = SpaceKind::ScalarP1;
  int num_vertices = 0;
  int dof_count    = 0;
  /// Sorted, unique constrained dofs.
  std::vector<int> dirichlet_dofs;

  int components() const { return kind == SpaceKind::VectorP1 ? 2 : 1; }
  int dof(int vertex, int component = 0) const { return vertex * components() + component; }

  std::vector<char> dirichlet_mask() const
  {
    std::vector<char> mask(static_cast<std::size_t>(dof_count), 0);
    for (int d : dirichlet_dofs) mask[static_cast<std::size_t>(d)] = 1;
    return mask;
  }
};

inline FeSpace make_space(const Mesh & mesh, SpaceKind kind)
{
  FeSpace s;
  s.kind         = kind;
  s.num_vertices = mesh.num_vertices();
  s.dof_count    = s.num_vertices * s.components();
  return s;
}

/// Velocity spaces get homogeneous Dirichlet dofs on every boundary vertex;
/// scalar (height) spaces and control spaces stay unconstrained.
inline FeSpace mark_dirichlet(FeSpace space, const Mesh & mesh, bool constrained = true)
{
  space.dirichlet_dofs.clear();
  if (space.kind == SpaceKind::VectorP1 && constrained) {
    for (int v : mesh.boundary_vertices) {
      space.dirichlet_dofs.push_back(space.dof(v, 0));
      space.dirichlet_dofs.push_back(space.dof(v, 1));
    }
  }
  return space;
}

/// Symmetric rule on the reference triangle, barycentric points, weights
/// normalized to sum to one. Exact up to total degree 5.
struct QuadratureRule
{
  std::vector<std::array<double, 3>> points;
  std::vector<double> weights;

  int degree = 0;
};

inline QuadratureRule triangle_quadrature()
{
  const double s15 = std::sqrt(15.0);
  const double a1  = (6.0 - s15) / 21.0;
  const double b1  = 1.0 - 2.0 * a1;
  const double a2  = (6.0 + s15) / 21.0;
  const double b2  = 1.0 - 2.0 * a2;
  const double w1  = (155.0 - s15) / 1200.0;
  const double w2  = (155.0 + s15) / 1200.0;

  QuadratureRule q;
  q.degree = 5;
  q.points  = {{1.0 / 3, 1.0 / 3, 1.0 / 3}, {a1, a1, b1}, {a1, b1, a1}, {b1, a1, a1},
              {a2, a2, b2}, {a2, b2, a2}, {b2, a2, a2}};
  q.weights = {9.0 / 40, w1, w1, w1, w2, w2, w2};
  return q;
}

}  // namespace sweocp

#endif  // SWEOCP_GEOMETRY_HPP
