"""Triangular meshes with tagged boundary edges.

Text format (``#`` starts a comment, blank lines ignored)::

    <n_nodes> <n_triangles> <n_edges>
    x y                # n_nodes lines
    i j k              # n_triangles lines, 0-based node ids
    i j tag            # n_edges lines, tag in {1, 2, 3}

Tag 1 is the clamped part, tag 2 carries tractions, tag 3 is the contact
part.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import RejectedInput

CLAMPED, TRACTION, CONTACT = 1, 2, 3
TAGS = (CLAMPED, TRACTION, CONTACT)


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tags: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        tri = np.array(self.triangles, dtype=np.int64)
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        tags = np.array(self.tags, dtype=np.int64).reshape(-1)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or len(nodes) == 0:
            raise RejectedInput("nodes must be an (n, 2) array")
        if tri.ndim != 2 or tri.shape[1] != 3 or len(tri) == 0:
            raise RejectedInput("triangles must be an (m, 3) array")
        if len(edges) != len(tags):
            raise RejectedInput("one tag per boundary edge")
        n = len(nodes)
        for arr, what in ((tri, "triangle"), (edges, "edge")):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise RejectedInput(f"{what} references a missing node")
        if np.any(~np.isin(tags, TAGS)):
            raise RejectedInput("edge tags must be 1, 2 or 3")
        span = np.ptp(nodes, axis=0)
        bbox2 = float(span @ span)
        area = _signed_areas(nodes, tri)
        if np.any(np.abs(area) <= 1e-14 * bbox2):
            bad = int(np.flatnonzero(np.abs(area) <= 1e-14 * bbox2)[0])
            raise RejectedInput(f"degenerate triangle {bad}")
        # counter-clockwise orientation
        flip = area < 0
        tri[flip] = tri[flip][:, [0, 2, 1]]
        boundary = _boundary_edges(tri)
        given = {}
        for (a, b), tag in zip(edges, tags):
            key = (min(a, b), max(a, b))
            if key in given:
                raise RejectedInput(f"boundary edge {key} tagged twice")
            given[key] = int(tag)
        if set(given) != set(boundary):
            missing = sorted(set(boundary) - set(given))
            extra = sorted(set(given) - set(boundary))
            raise RejectedInput(f"boundary tagging mismatch: untagged {missing[:3]}, "
                                f"not on boundary {extra[:3]}")
        if not np.any(tags == CLAMPED):
            raise RejectedInput("at least one clamped edge is required")
        for name, arr in (("nodes", nodes), ("triangles", tri), ("edges", edges), ("tags", tags)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def areas(self):
        return _signed_areas(self.nodes, self.triangles)

    def edges_with(self, tag):
        return self.edges[self.tags == tag]

    def nodes_with(self, tag):
        return np.unique(self.edges_with(tag).ravel())


def _signed_areas(nodes, tri):
    p0, p1, p2 = nodes[tri[:, 0]], nodes[tri[:, 1]], nodes[tri[:, 2]]
    d1, d2 = p1 - p0, p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _boundary_edges(tri):
    count = {}
    for a, b, c in tri:
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            count[key] = count.get(key, 0) + 1
    return [k for k, v in count.items() if v == 1]


def rectangle(width=2.0, height=1.0, nx=8, ny=4, left=CLAMPED, bottom=CONTACT,
              right=TRACTION, top=TRACTION):
    """Structured triangulation of ``[0, width] x [0, height]`` with side tags."""
    if nx < 1 or ny < 1 or width <= 0 or height <= 0:
        raise RejectedInput("rectangle needs positive sizes and counts")
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    tri = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            tri += [(a, b, c), (a, c, d)]
    edges, tags = [], []
    for i in range(nx):
        edges.append((nid(i, 0), nid(i + 1, 0)))
        tags.append(bottom)
        edges.append((nid(i + 1, ny), nid(i, ny)))
        tags.append(top)
    for j in range(ny):
        edges.append((nid(nx, j), nid(nx, j + 1)))
        tags.append(right)
        edges.append((nid(0, j + 1), nid(0, j)))
        tags.append(left)
    return Mesh(nodes, np.array(tri), np.array(edges), np.array(tags))


def _data_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_mesh(text):
    """Parse the text mesh format; errors name the offending line."""
    lines = list(_data_lines(text))
    if not lines:
        raise RejectedInput("empty mesh file")
    lineno, head = lines[0]
    try:
        n_nodes, n_tri, n_edges = (int(x) for x in head)
    except ValueError:
        raise RejectedInput(f"line {lineno}: expected three counts") from None
    body = lines[1:]
    if len(body) != n_nodes + n_tri + n_edges:
        raise RejectedInput(f"expected {n_nodes + n_tri + n_edges} data lines after the "
                            f"header, found {len(body)}")

    def read(block, kind, cast):
        out = []
        for ln, parts in block:
            if len(parts) != 3 - (kind == "node"):
                raise RejectedInput(f"line {ln}: wrong number of fields for a {kind}")
            try:
                out.append([cast(x) for x in parts])
            except ValueError:
                raise RejectedInput(f"line {ln}: cannot parse {kind} entry") from None
        return out

    nodes = read(body[:n_nodes], "node", float)
    tri = read(body[n_nodes:n_nodes + n_tri], "triangle", int)
    edges = read(body[n_nodes + n_tri:], "edge", int)
    edges = np.array(edges, dtype=np.int64).reshape(-1, 3)
    return Mesh(np.array(nodes), np.array(tri), edges[:, :2], edges[:, 2])


def read_mesh(path):
    with open(path, encoding="utf-8") as fh:
        return parse_mesh(fh.read())


def format_mesh(mesh):
    out = [f"{mesh.n_nodes} {len(mesh.triangles)} {len(mesh.edges)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes]
    out += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    out += [f"{a} {b} {t}" for (a, b), t in zip(mesh.edges, mesh.tags)]
    return "\n".join(out) + "\n"


def write_mesh(mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_mesh(mesh))
