import { defineConfig } from "vitest/config";

export default defineConfig({
  server: {
    proxy: {
      "/models": "http://127.0.0.1:8000",
      "/features": "http://127.0.0.1:8000",
      "/predict": "http://127.0.0.1:8000",
    },
  },
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
  },
});
