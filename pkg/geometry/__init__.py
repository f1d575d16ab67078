# Geometry package for meshes and electrode surveys
