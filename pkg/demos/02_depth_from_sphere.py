"""
Depth from a single colour frame
================================

Train the gradient MLP on a small synthetic calibration set, then
reconstruct a sphere press by Poisson integration of the predicted slopes.
A small set and ten epochs keep this quick, so the peak comes out shallow;
the tests train on 5000 images for 30 epochs.
"""
import numpy as np

from tacsole import depth
from tacsole.frame_io import TactileFrame
from tacsole.synth import IndenterScene, Sphere, reference_image, render_calibration_images, render_indentation

ref = TactileFrame(reference_image((143, 114)))
cal = depth.build_calibration_set(render_calibration_images(500, seed=0), ref)
print(f"{cal.n_train} training points, {cal.n_test} test points")

model = depth.train_gradient_mlp(cal, depth.TrainConfig(epochs=10, seed=0))
print(f"test MSE {model.history['test_mse']:.5f}")

frame, truth = render_indentation(IndenterScene([Sphere((28.0, 35.0), 2.0, 0.7)], 0.5))
g = depth.predict_gradients(model, frame)
dm, info = depth.integrate_poisson(g, pitch_mm=0.5)

# compare peaks
pr = tuple(int(v) for v in np.unravel_index(np.argmax(dm.z), dm.z.shape))
tr = tuple(int(v) for v in np.unravel_index(np.argmax(truth.depth), truth.depth.shape))
print(f"peak at {pr} (true {tr}), depth {dm.z.max():.3f} mm (true {truth.depth.max():.3f} mm)")
print(f"CG: {info.iterations} iterations, stop={info.stop}")

depth.write_depth_pgm("demo_depth.pgm", dm.z)
