"""Write a structured mesh in the text format, read it back and report its statistics."""
import sys

from dgforge.femcore import Mesh2D, structured_triangle_mesh


def main(path="mesh.txt", n=4):
    mesh = structured_triangle_mesh(n, n)
    mesh.dump(path)
    back = Mesh2D.load(path)
    print(f"cells {back.num_cells}, facets {back.num_facets}, "
          f"boundary facets {len(back.boundary_facets)}, h {back.max_diameter():.4f}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
