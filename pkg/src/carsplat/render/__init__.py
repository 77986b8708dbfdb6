from .camera import Camera
from .masks import make_part_masks
from .raster import GeomGrad, RenderOutput, project, render, render_backward

__all__ = ["Camera", "GeomGrad", "RenderOutput", "make_part_masks", "project", "render",
           "render_backward"]
