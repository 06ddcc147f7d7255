/** Orbitable 3D viewport for the generated model (client-side rendering). */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { ParsedStl } from "./stl.js";

/** Pure geometry construction; usable headlessly (no WebGL needed). */
export function geometryFromStl(parsed: ParsedStl): THREE.BufferGeometry {
  const geometry = new THREE.BufferGeometry();
  geometry.setAttribute("position", new THREE.BufferAttribute(parsed.positions, 3));
  geometry.computeVertexNormals();
  return geometry;
}

export interface Viewer {
  showMesh(parsed: ParsedStl): void;
  dispose(): void;
}

export function createViewer(canvas: HTMLCanvasElement): Viewer {
  const renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
  const scene = new THREE.Scene();
  scene.background = new THREE.Color(0x10141a);
  const camera = new THREE.PerspectiveCamera(50, canvas.width / canvas.height, 0.01, 1e5);
  camera.position.set(2, 2, 2);
  const controls = new OrbitControls(camera, canvas);
  controls.enableDamping = true;
  scene.add(new THREE.AmbientLight(0xffffff, 0.45));
  const key = new THREE.DirectionalLight(0xffffff, 1.0);
  key.position.set(3, 4, 5);
  scene.add(key);

  let mesh: THREE.Mesh | null = null;
  let disposed = false;

  function frame(): void {
    if (disposed) return;
    requestAnimationFrame(frame);
    controls.update();
    renderer.render(scene, camera);
  }
  frame();

  return {
    showMesh(parsed: ParsedStl): void {
      if (mesh) {
        scene.remove(mesh);
        mesh.geometry.dispose();
      }
      const geometry = geometryFromStl(parsed);
      mesh = new THREE.Mesh(
        geometry,
        new THREE.MeshStandardMaterial({ color: 0x6fa8dc, metalness: 0.15, roughness: 0.6 }),
      );
      scene.add(mesh);
      // frame the model: move the camera back proportionally to its extent
      const extent = Math.max(
        parsed.bboxMax[0] - parsed.bboxMin[0],
        parsed.bboxMax[1] - parsed.bboxMin[1],
        parsed.bboxMax[2] - parsed.bboxMin[2],
      );
      const center = new THREE.Vector3(
        (parsed.bboxMin[0] + parsed.bboxMax[0]) / 2,
        (parsed.bboxMin[1] + parsed.bboxMax[1]) / 2,
        (parsed.bboxMin[2] + parsed.bboxMax[2]) / 2,
      );
      controls.target.copy(center);
      camera.position.copy(center.clone().add(new THREE.Vector3(extent, extent, extent)));
      camera.near = extent / 1000;
      camera.far = extent * 100;
      camera.updateProjectionMatrix();
    },
    dispose(): void {
      disposed = true;
      controls.dispose();
      renderer.dispose();
    },
  };
}
