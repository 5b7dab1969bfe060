#pragma once

// CSV serialization for meshes, grids and observations. Every file starts
// with one '#' comment line followed by a column header.
//
//   nodes:      x,y[,value]
//   triangles:  i,j,k            (0-based vertex indices)
//   snapshots:  one nodes file per time level, value column = u^n

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hesspcl/errors.hpp"
#include "hesspcl/linalg.hpp"
#include "hesspcl/pde/finite_element.hpp"
#include "hesspcl/pde/manufactured.hpp"

namespace hesspcl::pde {

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_nodes_csv(std::ostream& os, const std::vector<std::array<double, 2>>& xy,
                            const Vector* values, const std::string& comment) {
  if (values && values->size() != static_cast<Index>(xy.size())) {
    throw ShapeError("nodes csv: value count does not match node count");
  }
  os << "# " << comment << '\n' << (values ? "x,y,value\n" : "x,y\n");
  for (std::size_t k = 0; k < xy.size(); ++k) {
    os << format_real(xy[k][0]) << ',' << format_real(xy[k][1]);
    if (values) os << ',' << format_real((*values)[static_cast<Index>(k)]);
    os << '\n';
  }
}

inline std::vector<std::array<double, 2>> grid_points(const Grid2D& grid) {
  std::vector<std::array<double, 2>> xy;
  for (Index j = 0; j <= grid.n; ++j) {
    for (Index i = 0; i <= grid.n; ++i) xy.push_back({grid.x(i), grid.y(j)});
  }
  return xy;
}

inline void write_triangles_csv(std::ostream& os, const TriMesh& mesh, const std::string& comment) {
  os << "# " << comment << "\ni,j,k\n";
  for (const auto& t : mesh.triangles) os << t[0] << ',' << t[1] << ',' << t[2] << '\n';
}

/// Rows of a numeric CSV with one comment line and one header line skipped.
inline std::vector<std::vector<double>> read_numeric_csv(std::istream& is, std::size_t columns) {
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0) throw ShapeError("csv: non-numeric cell '" + cell + "'");
      row.push_back(v);
    }
    if (row.size() != columns) {
      throw ShapeError("csv: expected " + std::to_string(columns) + " columns, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Writes `<stem>_nodes.csv` and `<stem>_triangles.csv`.
inline void write_mesh(const std::string& stem, const TriMesh& mesh, const Vector* values,
                       const std::string& comment) {
  std::ofstream nodes(stem + "_nodes.csv"), tris(stem + "_triangles.csv");
  if (!nodes || !tris) throw ConfigError("out", "cannot write mesh files at '" + stem + "'");
  write_nodes_csv(nodes, mesh.vertices, values, comment);
  write_triangles_csv(tris, mesh, comment);
}

/// Reads a mesh back; vertices on ∂[0,1]² are flagged as boundary.
inline TriMesh read_mesh(std::istream& nodes, std::istream& triangles) {
  TriMesh mesh;
  for (const auto& r : read_numeric_csv(nodes, 2)) {
    mesh.vertices.push_back({r[0], r[1]});
    mesh.boundary.push_back(r[0] == 0.0 || r[0] == 1.0 || r[1] == 0.0 || r[1] == 1.0);
  }
  for (const auto& r : read_numeric_csv(triangles, 3)) {
    mesh.triangles.push_back({static_cast<Index>(r[0]), static_cast<Index>(r[1]), static_cast<Index>(r[2])});
  }
  mesh.validate();
  return mesh;
}

/// One file per time level: `<stem>_<n>.csv` holding x,y,u^n.
inline void write_snapshots(const std::string& stem, const Grid2D& grid, const Observations& obs,
                            const std::string& comment) {
  const auto xy = grid_points(grid);
  for (std::size_t n = 0; n < obs.snapshots.size(); ++n) {
    std::ofstream os(stem + "_" + std::to_string(n) + ".csv");
    if (!os) throw ConfigError("out", "cannot write snapshot files at '" + stem + "'");
    write_nodes_csv(os, xy, &obs.snapshots[n], comment + " step " + std::to_string(n));
  }
}

}  // namespace hesspcl::pde
