"""Exact rectangle/cell overlap areas via shapely (GEOS), used to freeze
expected rasterization values for the diagonal-segment fixture."""
import math
from shapely.geometry import Polygon, box


def rectangle(p0, p1):
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    length = math.hypot(dx, dy)
    nx, ny = -dy / length * 0.5, dx / length * 0.5
    return Polygon([(p0[0] + nx, p0[1] + ny), (p1[0] + nx, p1[1] + ny),
                    (p1[0] - nx, p1[1] - ny), (p0[0] - nx, p0[1] - ny)])


def main():
    rect = rectangle((5.0, 5.0), (9.0, 9.0))
    total = 0.0
    for y in range(3, 12):
        for x in range(3, 12):
            a = rect.intersection(box(x, y, x + 1, y + 1)).area
            if a > 0:
                print(f"{{{x}, {y}, {a:.17g}}},")
                total += a
    print("total", repr(total), "4*sqrt2", 4 * math.sqrt(2))


if __name__ == "__main__":
    main()
