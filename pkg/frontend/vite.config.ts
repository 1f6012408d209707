import { defineConfig } from "vite";

const API = process.env.DIVGEN_API ?? "http://127.0.0.1:8400";

export default defineConfig({
  server: {
    proxy: {
      "/tasks": { target: API, changeOrigin: true },
    },
  },
  build: {
    outDir: "dist",
  },
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    testTimeout: 30_000,
    hookTimeout: 120_000,
  },
});
