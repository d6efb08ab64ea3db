# api/routes package
